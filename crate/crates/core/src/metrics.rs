//! Prediction and rationale metrics.
//!
//! Label comparison is by exact normalized match (lowercased,
//! whitespace collapsed); a prediction matching no known class is
//! scored as the reserved `<invalid>` class, which never matches a
//! gold label. BLEU is pinned to one variant: corpus-level BLEU-4,
//! uniform weights, clipped modified n-gram precision, brevity penalty
//! `exp(1 - ref_len/cand_len)` for short candidates, and add-one
//! smoothing on any order with zero matches. All metrics are pure and
//! reduce in fixed order.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Reserved class for predictions that match no known label.
pub const INVALID_LABEL: &str = "<invalid>";

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    LengthMismatch { left: usize, right: usize },
    EmptyCorpus,
    EmptyText,
    MissingMarker { label: String },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { left, right } => {
                write!(f, "sequence lengths differ: {left} vs {right}")
            }
            Self::EmptyCorpus => write!(f, "metric requires a non-empty corpus"),
            Self::EmptyText => write!(f, "metric requires non-empty texts"),
            Self::MissingMarker { label } => {
                write!(f, "no marker phrase known for label '{label}'")
            }
        }
    }
}

impl std::error::Error for MetricsError {}

/// Lowercases and collapses interior whitespace to single spaces.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Fraction of predictions exactly matching their gold label after
/// normalization.
pub fn accuracy<S: AsRef<str>, T: AsRef<str>>(preds: &[S], golds: &[T]) -> Result<f64, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch { left: preds.len(), right: golds.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize(p.as_ref()) == normalize(g.as_ref()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-class precision/recall/F1 row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences of this class.
    pub support: usize,
    /// Predicted occurrences of this class.
    pub predicted: usize,
}

/// Macro-averaged F1 with the per-class table. Zero denominators score
/// zero. The average runs over classes appearing in golds or mapped
/// predictions, including `<invalid>` when predicted.
pub fn macro_f1<S: AsRef<str>, T: AsRef<str>>(
    preds: &[S],
    golds: &[T],
    label_set: &[String],
) -> Result<(f64, Vec<ClassScores>), MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch { left: preds.len(), right: golds.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let known: Vec<String> = label_set.iter().map(|l| normalize(l)).collect();
    let golds_n: Vec<String> = golds.iter().map(|g| normalize(g.as_ref())).collect();
    let preds_n: Vec<String> = preds
        .iter()
        .map(|p| {
            let p = normalize(p.as_ref());
            if known.contains(&p) {
                p
            } else {
                INVALID_LABEL.to_string()
            }
        })
        .collect();

    // Class universe in a stable order: the label set first, then any
    // gold-only classes, then the invalid class when predicted.
    let mut classes: Vec<String> = Vec::new();
    for c in &known {
        if golds_n.contains(c) || preds_n.contains(c) {
            classes.push(c.clone());
        }
    }
    let mut extra: Vec<String> =
        golds_n.iter().filter(|g| !classes.contains(g)).cloned().collect();
    extra.sort_unstable();
    extra.dedup();
    classes.extend(extra);
    if preds_n.iter().any(|p| p == INVALID_LABEL) {
        classes.push(INVALID_LABEL.to_string());
    }

    let mut table = Vec::with_capacity(classes.len());
    let mut f1_sum = 0.0;
    for class in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (p, g) in preds_n.iter().zip(&golds_n) {
            match (p == class, g == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        table.push(ClassScores {
            label: class.clone(),
            precision,
            recall,
            f1,
            support: tp + fneg,
            predicted: tp + fp,
        });
    }
    Ok((f1_sum / classes.len() as f64, table))
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 with one reference per candidate.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[T]) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch { left: candidates.len(), right: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (c, r) in candidates.iter().zip(references) {
        let ct: Vec<&str> = c.as_ref().split_whitespace().collect();
        let rt: Vec<&str> = r.as_ref().split_whitespace().collect();
        cand_len += ct.len();
        ref_len += rt.len();
        for (n, (m, h)) in matches.iter_mut().zip(&mut totals).enumerate() {
            let n = n + 1;
            if ct.len() < n {
                continue;
            }
            *h += ct.len() - n + 1;
            let rc = ngram_counts(&rt, n);
            for (gram, count) in ngram_counts(&ct, n) {
                *m += count.min(rc.get(&gram).copied().unwrap_or(0));
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for (m, h) in matches.iter().zip(&totals) {
        let p = if *m > 0 {
            *m as f64 / *h as f64
        } else {
            // add-one smoothing on orders with zero matches
            (*m + 1) as f64 / (*h + 1) as f64
        };
        log_sum += 0.25 * p.ln();
    }
    let bp = if cand_len < ref_len { (1.0 - ref_len as f64 / cand_len as f64).exp() } else { 1.0 };
    Ok(bp * log_sum.exp())
}

/// F1 of multiset unigram overlap after lowercasing.
pub fn unigram_overlap_f1(candidate: &str, reference: &str) -> Result<f64, MetricsError> {
    let c = normalize(candidate);
    let r = normalize(reference);
    let ct: Vec<&str> = c.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    if ct.is_empty() || rt.is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let mut rc: HashMap<&str, usize> = HashMap::new();
    for t in &rt {
        *rc.entry(t).or_insert(0) += 1;
    }
    let mut cc: HashMap<&str, usize> = HashMap::new();
    for t in &ct {
        *cc.entry(t).or_insert(0) += 1;
    }
    let overlap: usize = cc.iter().map(|(t, &n)| n.min(rc.get(t).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / ct.len() as f64;
    let r = overlap as f64 / rt.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// `Some`: whether `text` contains the marker of `label` and no other
/// label's marker. `None`: the label has no marker entry. Inputs are
/// normalized here.
fn marker_consistent(text: &str, label: &str, table: &[(String, String)]) -> Option<bool> {
    let label = normalize(label);
    let own = &table.iter().find(|(tl, _)| *tl == label)?.1;
    let text = normalize(text);
    Some(
        text.contains(own.as_str())
            && table.iter().all(|(tl, tm)| tl == &label || !text.contains(tm.as_str())),
    )
}

/// Fraction of rationales containing exactly their conditioning
/// label's marker phrase and no other label's marker. A conditioning
/// label absent from the marker table is a contract error.
pub fn rationale_label_consistency<S: AsRef<str>, T: AsRef<str>>(
    rationales: &[S],
    conditioning_labels: &[T],
    markers: &[(String, String)],
) -> Result<f64, MetricsError> {
    if rationales.len() != conditioning_labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: rationales.len(),
            right: conditioning_labels.len(),
        });
    }
    if rationales.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let table: Vec<(String, String)> =
        markers.iter().map(|(l, m)| (normalize(l), normalize(m))).collect();
    let mut hits = 0usize;
    for (r, l) in rationales.iter().zip(conditioning_labels) {
        let consistent = marker_consistent(r.as_ref(), l.as_ref(), &table)
            .ok_or_else(|| MetricsError::MissingMarker { label: normalize(l.as_ref()) })?;
        hits += usize::from(consistent);
    }
    Ok(hits as f64 / rationales.len() as f64)
}

/// Counts block of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub examples: usize,
    pub invalid_predictions: usize,
}

/// Full evaluation report, serialized as pretty JSON with this field
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub bleu: f64,
    pub unigram_overlap_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    pub counts: ReportCounts,
}

impl MetricsReport {
    /// Computes the full report. `markers`, when given, enables the
    /// consistency score of `rationales` against the predicted labels.
    pub fn compute(
        preds: &[String],
        golds: &[String],
        label_set: &[String],
        rationales: &[String],
        gold_rationales: &[String],
        markers: Option<&[(String, String)]>,
    ) -> Result<MetricsReport, MetricsError> {
        let acc = accuracy(preds, golds)?;
        let (mf1, per_class) = macro_f1(preds, golds, label_set)?;
        let bleu_score = bleu(rationales, gold_rationales)?;
        let mut overlap_sum = 0.0;
        for (c, r) in rationales.iter().zip(gold_rationales) {
            overlap_sum += match unigram_overlap_f1(c, r) {
                Ok(v) => v,
                Err(MetricsError::EmptyText) => 0.0,
                Err(e) => return Err(e),
            };
        }
        // Conditioning labels here are model predictions, which may
        // match no known class; those count as inconsistent rather
        // than erroring the whole report.
        let consistency = markers.map(|m| {
            let table: Vec<(String, String)> =
                m.iter().map(|(l, mk)| (normalize(l), normalize(mk))).collect();
            let hits = rationales
                .iter()
                .zip(preds)
                .filter(|(r, p)| marker_consistent(r, p, &table).unwrap_or(false))
                .count();
            hits as f64 / rationales.len() as f64
        });
        let known: Vec<String> = label_set.iter().map(|l| normalize(l)).collect();
        let invalid = preds.iter().filter(|p| !known.contains(&normalize(p))).count();
        Ok(MetricsReport {
            accuracy: acc,
            macro_f1: mf1,
            per_class,
            bleu: bleu_score,
            unigram_overlap_f1: overlap_sum / rationales.len().max(1) as f64,
            consistency,
            counts: ReportCounts { examples: preds.len(), invalid_predictions: invalid },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn accuracy_basics() {
        let same = s(&["a", "b", "c"]);
        assert_eq!(accuracy(&same, &same).unwrap(), 1.0);
        assert_eq!(accuracy(&s(&["a", "b"]), &s(&["x", "y"])).unwrap(), 0.0);
        let preds = s(&["a", "a", "a", "a", "a", "a", "a", "b", "b", "b"]);
        let golds = s(&["a", "a", "a", "a", "a", "a", "a", "a", "a", "a"]);
        assert!((accuracy(&preds, &golds).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn accuracy_normalizes() {
        assert_eq!(accuracy(&s(&["Home  Care"]), &s(&["home care"])).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_contract_errors() {
        assert!(matches!(
            accuracy(&s(&["a"]), &s(&["a", "b"])),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(accuracy::<&str, &str>(&[], &[]), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn accuracy_invariant_under_joint_permutation() {
        let preds = s(&["a", "b", "c", "a", "zz"]);
        let golds = s(&["a", "c", "c", "b", "a"]);
        let base = accuracy(&preds, &golds).unwrap();
        let perm = [3usize, 0, 4, 2, 1];
        let p2: Vec<String> = perm.iter().map(|&i| preds[i].clone()).collect();
        let g2: Vec<String> = perm.iter().map(|&i| golds[i].clone()).collect();
        assert_eq!(base, accuracy(&p2, &g2).unwrap());
    }

    #[test]
    fn macro_f1_perfect() {
        let labels = s(&["a", "b"]);
        let (f1, table) = macro_f1(&s(&["a", "b", "a"]), &s(&["a", "b", "a"]), &labels).unwrap();
        assert_eq!(f1, 1.0);
        assert!(table.iter().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn macro_f1_binary_hand_case() {
        // preds [A,A,B,B] golds [A,B,B,B]:
        //   A: tp=1 fp=1 fn=0 -> P=0.5 R=1   F1=2/3
        //   B: tp=2 fp=0 fn=1 -> P=1   R=2/3 F1=4/5
        let labels = s(&["a", "b"]);
        let (f1, table) = macro_f1(&s(&["a", "a", "b", "b"]), &s(&["a", "b", "b", "b"]), &labels).unwrap();
        let expect = (2.0 / 3.0 + 4.0 / 5.0) / 2.0;
        assert!((f1 - expect).abs() < 1e-12);
        assert!((table[0].precision - 0.5).abs() < 1e-12);
        assert!((table[0].recall - 1.0).abs() < 1e-12);
        assert!((table[1].f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_all_invalid_predictions() {
        let labels = s(&["a", "b"]);
        let (f1, table) = macro_f1(&s(&["zz", "zz"]), &s(&["a", "b"]), &labels).unwrap();
        assert_eq!(f1, 0.0);
        let invalid = table.iter().find(|c| c.label == INVALID_LABEL).unwrap();
        assert_eq!(invalid.precision, 0.0);
        assert_eq!(invalid.predicted, 2);
    }

    #[test]
    fn macro_f1_is_mean_of_table() {
        let labels = s(&["a", "b", "c"]);
        let preds = s(&["a", "b", "c", "a", "nope", "c"]);
        let golds = s(&["a", "c", "c", "b", "b", "a"]);
        let (f1, table) = macro_f1(&preds, &golds, &labels).unwrap();
        let mean = table.iter().map(|c| c.f1).sum::<f64>() / table.len() as f64;
        assert!((f1 - mean).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_invariant_under_relabeling() {
        let labels = s(&["a", "b", "c"]);
        let preds = s(&["a", "b", "c", "a", "c", "b"]);
        let golds = s(&["a", "c", "c", "b", "b", "b"]);
        let (f1, _) = macro_f1(&preds, &golds, &labels).unwrap();
        let rename = |x: &str| match x {
            "a" => "xx".to_string(),
            "b" => "yy".to_string(),
            _ => "zz".to_string(),
        };
        let labels2 = s(&["xx", "yy", "zz"]);
        let p2: Vec<String> = preds.iter().map(|x| rename(x)).collect();
        let g2: Vec<String> = golds.iter().map(|x| rename(x)).collect();
        let (f2, _) = macro_f1(&p2, &g2, &labels2).unwrap();
        assert!((f1 - f2).abs() < 1e-15);
    }

    #[test]
    fn bleu_identity_is_one() {
        let c = s(&["the cat sat on the mat", "a b", "one two three four five"]);
        assert!((bleu(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        // even a corpus of short sentences
        let short = s(&["a b c"]);
        assert!((bleu(&short, &short).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_disjoint_is_near_zero() {
        let c = s(&["a a a a a a a a a a a a a a a a a a a a a a a a a"]);
        let r = s(&["b b b b b b b b b b b b b b b b b b b b b b b b b"]);
        let v = bleu(&c, &r).unwrap();
        assert!(v > 0.0, "smoothing floor, not exactly 0");
        assert!(v < 0.05, "got {v}");
    }

    #[test]
    fn bleu_never_exceeds_one() {
        let c = s(&["a b c d e f", "x y"]);
        let r = s(&["a b c d e f g h", "x y z"]);
        let v = bleu(&c, &r).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn bleu_contract_errors() {
        assert!(matches!(bleu::<&str, &str>(&[], &[]), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(bleu(&["a"], &["a", "b"]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn unigram_overlap_hand_cases() {
        assert_eq!(unigram_overlap_f1("a b c", "a b c").unwrap(), 1.0);
        assert_eq!(unigram_overlap_f1("a b", "c d").unwrap(), 0.0);
        let v = unigram_overlap_f1("a b c", "a b d").unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(unigram_overlap_f1("", "a"), Err(MetricsError::EmptyText)));
    }

    #[test]
    fn consistency_hand_cases() {
        let markers = vec![
            ("urgent".to_string(), "go now".to_string()),
            ("mild".to_string(), "stay home".to_string()),
        ];
        let ok = rationale_label_consistency(&s(&["please go now"]), &s(&["urgent"]), &markers).unwrap();
        assert_eq!(ok, 1.0);
        let wrong =
            rationale_label_consistency(&s(&["please stay home"]), &s(&["urgent"]), &markers).unwrap();
        assert_eq!(wrong, 0.0);
        // both markers present: not consistent
        let both = rationale_label_consistency(&s(&["go now or stay home"]), &s(&["urgent"]), &markers)
            .unwrap();
        assert_eq!(both, 0.0);

        let mut rats = Vec::new();
        let mut labs = Vec::new();
        for i in 0..10 {
            labs.push("mild".to_string());
            rats.push(if i < 7 { "stay home".to_string() } else { "go now".to_string() });
        }
        let v = rationale_label_consistency(&rats, &labs, &markers).unwrap();
        assert!((v - 0.7).abs() < 1e-12);

        let err = rationale_label_consistency(&s(&["x"]), &s(&["unknown"]), &markers).unwrap_err();
        assert!(matches!(err, MetricsError::MissingMarker { .. }));
    }

    #[test]
    fn report_json_is_stable_and_ordered() {
        let preds = s(&["a", "b"]);
        let golds = s(&["a", "b"]);
        let labels = s(&["a", "b"]);
        let rats = s(&["fine today", "go now"]);
        let report =
            MetricsReport::compute(&preds, &golds, &labels, &rats, &rats, None).unwrap();
        let j1 = report.to_json();
        let j2 = report.to_json();
        assert_eq!(j1, j2);
        let acc_pos = j1.find("\"accuracy\"").unwrap();
        let bleu_pos = j1.find("\"bleu\"").unwrap();
        assert!(acc_pos < bleu_pos);
        let parsed: MetricsReport = serde_json::from_str(&j1).unwrap();
        assert_eq!(parsed, report);
    }
}
