//! Run configuration: one file drives every subcommand.
//!
//! Accepted as TOML or JSON (by extension). Every field has a default;
//! unknown keys are rejected. The effective configuration (defaults
//! applied, command-line overrides folded in) is echoed into each
//! output directory as `config.toml`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use r2d_core::data::{default_grammar, generate_synthetic, load_jsonl, stratified_split, Example, GrammarConfig};
use r2d_core::model::ModelConfig;
use r2d_core::optim::OptimizerConfig;
use r2d_core::schedule::ScheduleConfig;
use r2d_core::train::{PipelineConfig, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Grammar file (TOML/JSON) for the synthetic source; the built-in
    /// six-class grammar when absent.
    pub grammar_config: Option<PathBuf>,
    /// Synthetic corpus size before splitting.
    pub n: usize,
    /// Train/val/test fractions; must sum to 1.
    pub fractions: [f64; 3],
    /// JSONL paths for `source = "jsonl"`.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            grammar_config: None,
            n: 3000,
            fractions: [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            train: None,
            val: None,
            test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            variants: r2d_core::train::ALL_VARIANTS.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub variant: Variant,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            variant: Variant::Full,
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads from a TOML or JSON file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(out) = out {
            self.out_dir = out;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Writes the effective config next to a command's outputs.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            variant: self.variant,
            seed: self.seed,
            model: self.model,
            schedule: self.schedule,
            optimizer: self.optimizer,
            train: self.train,
        }
    }

    pub fn grammar(&self) -> Result<GrammarConfig> {
        let grammar = match &self.data.grammar_config {
            Some(path) => GrammarConfig::from_file(path)
                .with_context(|| format!("loading grammar {}", path.display()))?,
            None => default_grammar(),
        };
        Ok(grammar)
    }
}

/// Materialized data for one run.
pub struct ResolvedData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub label_set: Vec<String>,
    pub markers: Option<Vec<(String, String)>>,
}

/// Loads or generates the three splits according to the config. The
/// synthetic corpus is a pure function of the grammar (its own seed)
/// and `n`; the split shuffle uses the run seed.
pub fn resolve_data(cfg: &RunConfig) -> Result<ResolvedData> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let grammar = cfg.grammar()?;
            let examples = generate_synthetic(&grammar, cfg.data.n)?;
            let [a, b, c] = cfg.data.fractions;
            let (train, val, test) = stratified_split(&examples, (a, b, c), cfg.seed)?;
            Ok(ResolvedData {
                train,
                val,
                test,
                label_set: grammar.label_names(),
                markers: Some(grammar.marker_table()),
            })
        }
        DataSource::Jsonl => {
            let field = |name: &str, p: &Option<PathBuf>| -> Result<Vec<Example>> {
                let Some(p) = p else {
                    bail!("data.source = \"jsonl\" requires data.{name}");
                };
                Ok(load_jsonl(p)?)
            };
            let train = field("train", &cfg.data.train)?;
            let val = field("val", &cfg.data.val)?;
            let test = field("test", &cfg.data.test)?;
            let mut label_set: Vec<String> = Vec::new();
            for ex in &train {
                if !label_set.contains(&ex.label) {
                    label_set.push(ex.label.clone());
                }
            }
            Ok(ResolvedData { train, val, test, label_set, markers: None })
        }
    }
}
