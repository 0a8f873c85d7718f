//! Corpus handling: synthetic triage-style generation, JSONL
//! ingestion, and stratified splitting.
//!
//! The synthetic grammar draws a label, a decisive symptom from that
//! label's lexicon, and note/rationale templates. Each note carries
//! exactly one decisive symptom, so the label is a deterministic
//! function of the note, and each rationale embeds its label's marker
//! phrase, which makes rationale-label consistency machine-checkable.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// One supervised instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    #[serde(default)]
    pub id: String,
    pub input: String,
    pub label: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Io(String),
    MalformedLine { line: usize, message: String },
    MissingKey { line: usize, key: &'static str },
    EmptyField { line: usize, key: &'static str },
    BadFractions { fractions: (f64, f64, f64), reason: &'static str },
    Grammar(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::MalformedLine { line, message } => {
                write!(f, "line {line}: malformed JSON: {message}")
            }
            Self::MissingKey { line, key } => write!(f, "line {line}: missing key '{key}'"),
            Self::EmptyField { line, key } => write!(f, "line {line}: key '{key}' is empty"),
            Self::BadFractions { fractions, reason } => {
                write!(f, "bad split fractions {fractions:?}: {reason}")
            }
            Self::Grammar(msg) => write!(f, "invalid grammar config: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

/// One label class of the synthetic grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub name: String,
    /// Decisive symptom phrases; exactly one appears per note.
    pub symptoms: Vec<String>,
    /// Phrase embedded in every rationale for this label.
    pub marker: String,
    /// Note templates; each must contain `{symptom}` exactly once.
    pub note_templates: Vec<String>,
    /// Rationale templates; each must contain `{marker}`.
    pub rationale_templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarConfig {
    pub labels: Vec<LabelSpec>,
    /// Filler words appended to notes.
    pub noise_words: Vec<String>,
    /// Per-slot probability of appending a noise word (3 slots).
    pub noise_rate: f64,
    /// Geometric class-imbalance ratio; label k is weighted
    /// `imbalance^k`. 1.0 gives a balanced corpus.
    pub imbalance: f64,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        default_grammar()
    }
}

const NOTE_TEMPLATES: [&str; 3] = [
    "caller reports {symptom} since this morning",
    "patient describes {symptom} and asks what to do",
    "triage note states {symptom} with no other complaints",
];

const RATIONALE_TEMPLATES: [&str; 2] = [
    "the note mentions {symptom} so {marker}",
    "{symptom} indicates that {marker}",
];

/// The built-in six-class urgency grammar.
pub fn default_grammar() -> GrammarConfig {
    let mk = |name: &str, marker: &str, symptoms: &[&str]| LabelSpec {
        name: name.to_string(),
        symptoms: symptoms.iter().map(|s| s.to_string()).collect(),
        marker: marker.to_string(),
        note_templates: NOTE_TEMPLATES.iter().map(|s| s.to_string()).collect(),
        rationale_templates: RATIONALE_TEMPLATES.iter().map(|s| s.to_string()).collect(),
    };
    GrammarConfig {
        labels: vec![
            mk(
                "home care",
                "self care at home is enough",
                &["mild sore throat", "small bruise", "runny nose", "itchy eyes"],
            ),
            mk(
                "physician within three days",
                "book a routine clinic visit",
                &["persistent cough", "mild earache", "recurring headache"],
            ),
            mk(
                "physician within 24 hours",
                "arrange review within a day",
                &["worsening rash", "painful urination", "low grade fever"],
            ),
            mk(
                "call pharmacist",
                "a pharmacist should advise",
                &["missed dose question", "new tablet side effect", "repeat prescription worry"],
            ),
            mk(
                "go to ed now",
                "emergency department assessment is required",
                &["deep cut that keeps bleeding", "sudden severe abdominal pain", "high fever with stiff neck"],
            ),
            mk(
                "call ems now",
                "dispatch an ambulance immediately",
                &["crushing chest pain", "face drooping and slurred speech", "severe trouble breathing"],
            ),
        ],
        noise_words: vec![
            "today".into(),
            "earlier".into(),
            "overnight".into(),
            "again".into(),
            "somewhat".into(),
            "lately".into(),
        ],
        noise_rate: 0.3,
        imbalance: 1.0,
        seed: 0,
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::Grammar(msg));
        if self.labels.is_empty() {
            return fail("label set is empty".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        if !(self.imbalance > 0.0 && self.imbalance.is_finite()) {
            return fail(format!("imbalance {} must be positive", self.imbalance));
        }
        for spec in &self.labels {
            if spec.symptoms.len() < 3 {
                return fail(format!("label '{}' has {} symptoms, need at least 3", spec.name, spec.symptoms.len()));
            }
            if spec.note_templates.len() < 2 || spec.rationale_templates.len() < 2 {
                return fail(format!("label '{}' needs at least 2 note and 2 rationale templates", spec.name));
            }
            if spec.marker.trim().is_empty() || spec.name.trim().is_empty() {
                return fail(format!("label '{}' has an empty name or marker", spec.name));
            }
            for t in &spec.note_templates {
                if t.matches("{symptom}").count() != 1 {
                    return fail(format!("note template '{t}' must contain {{symptom}} exactly once"));
                }
            }
            for t in &spec.rationale_templates {
                if !t.contains("{marker}") {
                    return fail(format!("rationale template '{t}' must contain {{marker}}"));
                }
            }
        }
        // Markers pairwise distinct and non-overlapping, so a rationale
        // can be attributed to exactly one label.
        for (i, a) in self.labels.iter().enumerate() {
            for b in self.labels.iter().skip(i + 1) {
                if a.marker == b.marker || a.marker.contains(&b.marker) || b.marker.contains(&a.marker) {
                    return fail(format!("markers '{}' and '{}' overlap", a.marker, b.marker));
                }
            }
        }
        // The decisive symptom determines the label: no symptom may
        // appear inside another label's symptom or in template text.
        for (i, a) in self.labels.iter().enumerate() {
            for (j, b) in self.labels.iter().enumerate() {
                for sa in &a.symptoms {
                    if i != j && b.symptoms.iter().any(|sb| sb.contains(sa)) {
                        return fail(format!("symptom '{sa}' of '{}' collides with label '{}'", a.name, b.name));
                    }
                    for t in b.note_templates.iter() {
                        if t.replace("{symptom}", "").contains(sa) {
                            return fail(format!("note template text contains symptom '{sa}'"));
                        }
                    }
                }
            }
        }
        for w in &self.noise_words {
            for spec in &self.labels {
                if spec.symptoms.iter().any(|s| s.contains(w.as_str())) {
                    return fail(format!("noise word '{w}' appears inside a symptom"));
                }
            }
        }
        Ok(())
    }

    /// Loads a grammar from a TOML or JSON file, by extension.
    pub fn from_file(path: &Path) -> Result<GrammarConfig, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let cfg: GrammarConfig = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).map_err(|e| DataError::Grammar(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| DataError::Grammar(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    /// (label name, marker) pairs for the consistency metric.
    pub fn marker_table(&self) -> Vec<(String, String)> {
        self.labels.iter().map(|l| (l.name.clone(), l.marker.clone())).collect()
    }
}

/// Generates `n` examples from the grammar. Pure in `(cfg, n)`; the
/// seed lives in the config.
pub fn generate_synthetic(cfg: &GrammarConfig, n: usize) -> Result<Vec<Example>, DataError> {
    assert!(n > 0, "generate_synthetic with n = 0");
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);

    // Geometric label weights, cumulative for inverse-cdf draws.
    let weights: Vec<f64> = (0..cfg.labels.len()).map(|k| cfg.imbalance.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cum.push(acc);
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let u = rng.uniform();
        let li = cum.iter().position(|&c| u < c).unwrap_or(cfg.labels.len() - 1);
        let spec = &cfg.labels[li];
        let symptom = &spec.symptoms[rng.below(spec.symptoms.len())];
        let template = &spec.note_templates[rng.below(spec.note_templates.len())];
        let mut note = template.replace("{symptom}", symptom);
        for _ in 0..3 {
            if rng.uniform() < cfg.noise_rate {
                note.push(' ');
                note.push_str(&cfg.noise_words[rng.below(cfg.noise_words.len())]);
            }
        }
        let rt = &spec.rationale_templates[rng.below(spec.rationale_templates.len())];
        let rationale = rt.replace("{symptom}", symptom).replace("{marker}", &spec.marker);

        // By-construction invariant: the note names exactly one
        // decisive symptom, and it belongs to this label.
        for (j, other) in cfg.labels.iter().enumerate() {
            for s in &other.symptoms {
                let hits = note.matches(s.as_str()).count();
                let expected = usize::from(j == li && s == symptom);
                if hits != expected {
                    return Err(DataError::Grammar(format!(
                        "note '{note}' mentions symptom '{s}' {hits} times, expected {expected}"
                    )));
                }
            }
        }

        out.push(Example {
            id: format!("syn-{i:06}"),
            input: note,
            label: spec.name.clone(),
            rationale,
        });
    }
    Ok(out)
}

/// Loads examples from a JSONL file: one object per line with keys
/// `input`, `label`, `rationale`, and optional `id`.
pub fn load_jsonl(path: &Path) -> Result<Vec<Example>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| DataError::MalformedLine { line: line_no, message: e.to_string() })?;
        let get = |key: &'static str| -> Result<String, DataError> {
            let field = value.get(key).ok_or(DataError::MissingKey { line: line_no, key })?;
            let s = field
                .as_str()
                .ok_or(DataError::MalformedLine { line: line_no, message: format!("key '{key}' is not a string") })?;
            Ok(s.to_string())
        };
        let input = get("input")?;
        let label = get("label")?;
        let rationale = get("rationale")?;
        for (key, field) in [("input", &input), ("label", &label), ("rationale", &rationale)] {
            if field.trim().is_empty() {
                return Err(DataError::EmptyField { line: line_no, key });
            }
        }
        let id = match value.get("id").and_then(|v| v.as_str()) {
            Some(s) => s.to_string(),
            None => format!("jsonl-{:06}", out.len()),
        };
        out.push(Example { id, input, label, rationale });
    }
    Ok(out)
}

/// Writes examples as JSONL with stable key order.
pub fn save_jsonl(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    let mut buf = String::new();
    for ex in examples {
        buf.push_str(&serde_json::to_string(ex).expect("example serialization cannot fail"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
}

/// Splits examples into train/val/test with per-label proportional
/// allocation (largest-remainder rounding) and a seeded within-label
/// shuffle. The three parts are disjoint and partition the input.
pub fn stratified_split(
    examples: &[Example],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>), DataError> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(DataError::BadFractions { fractions, reason: "negative fraction" });
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions { fractions, reason: "must sum to 1" });
    }

    // Group indices by label, first-seen label order.
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == ex.label) {
            Some((_, idxs)) => idxs.push(i),
            None => groups.push((&ex.label, vec![i])),
        }
    }

    let mut rng = Rng::new(seed);
    let fracs = [a, b, c];
    let mut parts: [Vec<Example>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (label, mut idxs) in groups {
        if idxs.len() < 3 {
            log::warn!("label '{label}' has only {} examples; some splits will be empty", idxs.len());
        }
        rng.shuffle(&mut idxs);
        let n = idxs.len();
        let quotas: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        // Distribute the remainder to the largest fractional parts;
        // ties resolve to the earlier part.
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&x, &y| {
            let rx = quotas[x] - quotas[x].floor();
            let ry = quotas[y] - quotas[y].floor();
            ry.partial_cmp(&rx).unwrap().then(x.cmp(&y))
        });
        for k in 0..(n - assigned) {
            counts[order[k % 3]] += 1;
        }
        let mut cursor = 0;
        for (part, &count) in parts.iter_mut().zip(&counts) {
            for &idx in &idxs[cursor..cursor + count] {
                part.push(examples[idx].clone());
            }
            cursor += count;
        }
    }
    let [train, val, test] = parts;
    Ok((train, val, test))
}
