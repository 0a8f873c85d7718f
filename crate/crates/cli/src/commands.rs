//! Subcommand implementations. Every command is deterministic given
//! (config, seed, input files): reruns produce byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use r2d_core::checkpoint::Checkpoint;
use r2d_core::data::{load_jsonl, save_jsonl, Example};
use r2d_core::metrics::MetricsReport;
use r2d_core::schedule::{alpha_at, pi_at};
use r2d_core::train::{infer, run_training, TrainConfig};

use crate::config::{resolve_data, DataSource, ResolvedData, RunConfig};
use crate::UsageError;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Generates the synthetic corpus, splits it, and writes
/// train/val/test JSONL plus a split manifest.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    if cfg.data.source != DataSource::Synthetic {
        bail!("gen-data requires data.source = \"synthetic\"");
    }
    let data = resolve_data(cfg)?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    cfg.echo_into(out)?;

    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        save_jsonl(&out.join(format!("{name}.jsonl")), split)?;
    }

    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for ex in data.train.iter().chain(&data.val).chain(&data.test) {
        *histogram.entry(ex.label.clone()).or_insert(0) += 1;
    }
    let grammar = cfg.grammar()?;
    let manifest = serde_json::json!({
        "seed": cfg.seed,
        "grammar_seed": grammar.seed,
        "n": cfg.data.n,
        "fractions": cfg.data.fractions,
        "counts": {
            "train": data.train.len(),
            "val": data.val.len(),
            "test": data.test.len(),
        },
        "label_histogram": histogram,
    });
    write_file(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    log::info!(
        "wrote {}/{{train,val,test}}.jsonl ({}/{}/{} examples)",
        out.display(),
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    Ok(())
}

/// Artifacts written by a training run.
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub stage1_checkpoint: Option<PathBuf>,
    pub report: PathBuf,
}

/// Trains the configured variant and writes checkpoints plus the
/// training report.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let data = resolve_data(cfg)?;
    train_into(cfg, &data, &cfg.out_dir)
}

fn train_into(cfg: &RunConfig, data: &ResolvedData, out: &Path) -> Result<TrainArtifacts> {
    ensure_dir(out)?;
    cfg.echo_into(out)?;

    log::info!(
        "training variant={} seed={} train={} val={}",
        cfg.variant,
        cfg.seed,
        data.train.len(),
        data.val.len()
    );
    let outcome = run_training(
        &cfg.pipeline(),
        &data.train,
        &data.val,
        &data.label_set,
        data.markers.as_deref(),
    )?;

    let ckpt_path = out.join("model.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;
    let stage1_path = match &outcome.stage1_checkpoint {
        Some(ckpt) => {
            let p = out.join("stage1.ckpt");
            ckpt.save(&p)?;
            Some(p)
        }
        None => None,
    };
    let report_path = out.join("report.json");
    write_file(&report_path, &outcome.report.to_json())?;
    write_file(&out.join("vocab.json"), &outcome.checkpoint.vocab.to_json())?;
    log::info!(
        "selected checkpoint: step {} validation score {:.4}",
        outcome.report.selected_step,
        outcome.report.selected_score
    );
    Ok(TrainArtifacts { checkpoint: ckpt_path, stage1_checkpoint: stage1_path, report: report_path })
}

/// Runs two-step inference over a whole example slice and scores it.
fn evaluate_checkpoint(ckpt: &Checkpoint, examples: &[Example], tcfg: &TrainConfig) -> Result<MetricsReport> {
    if examples.is_empty() {
        bail!("evaluation data is empty");
    }
    let model = ckpt.model()?;
    let mut preds = Vec::with_capacity(examples.len());
    let mut rationales = Vec::with_capacity(examples.len());
    for ex in examples {
        let inference = infer(&model, &ckpt.vocab, &ex.input, tcfg)?;
        preds.push(inference.label);
        rationales.push(inference.rationale);
    }
    let golds: Vec<String> = examples.iter().map(|e| e.label.clone()).collect();
    let gold_rationales: Vec<String> = examples.iter().map(|e| e.rationale.clone()).collect();
    Ok(MetricsReport::compute(
        &preds,
        &golds,
        &ckpt.label_set,
        &rationales,
        &gold_rationales,
        ckpt.markers.as_deref(),
    )?)
}

/// Evaluates a checkpoint on a JSONL file; prints the report and
/// writes `metrics.json` into the output directory.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, data: &Path) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let examples = load_jsonl(data)?;
    let report = evaluate_checkpoint(&ckpt, &examples, &cfg.train)?;
    let json = report.to_json();
    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(report)
}

/// Predicts a label and a rationale conditioned on that prediction.
pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, input: &str) -> Result<()> {
    if input.trim().is_empty() {
        return Err(UsageError("--input must be non-empty".into()).into());
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.model()?;
    let inference = infer(&model, &ckpt.vocab, input, &cfg.train)?;
    println!("{}", inference.label);
    println!("{}", inference.rationale);
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationMedians {
    pub variant: String,
    pub macro_f1: Option<f64>,
    pub bleu: Option<f64>,
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub medians: Vec<AblationMedians>,
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

impl AblationTable {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24}{:>6}{:>11}{:>11}{:>11}{:>13}\n",
            "variant", "seed", "accuracy", "macro_f1", "bleu", "consistency"
        ));
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        for cell in &self.cells {
            if let Some(err) = &cell.error {
                out.push_str(&format!(
                    "{:<24}{:>6}  FAILED: {err}\n",
                    cell.variant, cell.seed
                ));
            } else {
                out.push_str(&format!(
                    "{:<24}{:>6}{:>11}{:>11}{:>11}{:>13}\n",
                    cell.variant,
                    cell.seed,
                    fmt(cell.accuracy),
                    fmt(cell.macro_f1),
                    fmt(cell.bleu),
                    fmt(cell.consistency),
                ));
            }
        }
        out.push('\n');
        for m in &self.medians {
            out.push_str(&format!(
                "{:<30}{:>11}{:>11}{:>13}\n",
                format!("median({})", m.variant),
                fmt(m.macro_f1),
                fmt(m.bleu),
                fmt(m.consistency),
            ));
        }
        out
    }
}

/// Trains and evaluates every (variant, seed) cell, then writes the
/// table as JSON and aligned text. Cell failures leave markers and a
/// nonzero exit.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let table = run_ablation(cfg)?;
    let failed: Vec<String> = table
        .cells
        .iter()
        .filter(|c| c.error.is_some())
        .map(|c| format!("{}-seed{}", c.variant, c.seed))
        .collect();
    if !failed.is_empty() {
        bail!("{} ablation cell(s) failed: {}", failed.len(), failed.join(", "));
    }
    Ok(())
}

/// Ablation driver, reusable from tests: returns the full table after
/// writing all artifacts.
pub fn run_ablation(cfg: &RunConfig) -> Result<AblationTable> {
    ensure_dir(&cfg.out_dir)?;
    cfg.echo_into(&cfg.out_dir)?;
    let mut cells = Vec::new();
    for &variant in &cfg.ablate.variants {
        for &seed in &cfg.ablate.seeds {
            let mut cell_cfg = cfg.clone();
            cell_cfg.variant = variant;
            cell_cfg.seed = seed;
            cell_cfg.out_dir = cfg.out_dir.join("cells").join(format!("{variant}-seed{seed}"));
            let cell = match ablation_cell(&cell_cfg) {
                Ok(report) => AblationCell {
                    variant: variant.name().to_string(),
                    seed,
                    accuracy: Some(report.accuracy),
                    macro_f1: Some(report.macro_f1),
                    bleu: Some(report.bleu),
                    consistency: report.consistency,
                    error: None,
                },
                Err(e) => AblationCell {
                    variant: variant.name().to_string(),
                    seed,
                    accuracy: None,
                    macro_f1: None,
                    bleu: None,
                    consistency: None,
                    error: Some(format!("{e:#}")),
                },
            };
            log::info!(
                "ablation cell {}-seed{}: macro_f1 {:?}",
                variant,
                seed,
                cell.macro_f1
            );
            cells.push(cell);
        }
    }

    let mut medians = Vec::new();
    for &variant in &cfg.ablate.variants {
        let of = |pick: fn(&AblationCell) -> Option<f64>| {
            let mut vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.variant == variant.name() && c.error.is_none())
                .filter_map(pick)
                .collect();
            median(&mut vals)
        };
        medians.push(AblationMedians {
            variant: variant.name().to_string(),
            macro_f1: of(|c| c.macro_f1),
            bleu: of(|c| c.bleu),
            consistency: of(|c| c.consistency),
        });
    }

    let table = AblationTable { cells, medians };
    write_file(&cfg.out_dir.join("ablation.json"), &serde_json::to_string_pretty(&table)?)?;
    write_file(&cfg.out_dir.join("ablation.txt"), &table.render_text())?;
    Ok(table)
}

fn ablation_cell(cfg: &RunConfig) -> Result<MetricsReport> {
    let data = resolve_data(cfg)?;
    let artifacts = train_into(cfg, &data, &cfg.out_dir)?;
    let ckpt = Checkpoint::load(&artifacts.checkpoint)?;
    let report = evaluate_checkpoint(&ckpt, &data.test, &cfg.train)?;
    write_file(&cfg.out_dir.join("metrics.json"), &report.to_json())?;
    Ok(report)
}

/// Writes `schedule.csv` with one `(t, pi, alpha)` row per step
/// 0..=T inclusive.
pub fn cmd_schedule_dump(cfg: &RunConfig) -> Result<()> {
    cfg.schedule.validate().map_err(|e| anyhow::anyhow!("schedule: {e}"))?;
    let mut out = String::new();
    for t in 0..=cfg.schedule.total_steps {
        out.push_str(&format!(
            "{t},{},{}\n",
            pi_at(t, &cfg.schedule),
            alpha_at(t, &cfg.schedule)
        ));
    }
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("schedule.csv");
    write_file(&path, &out)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
