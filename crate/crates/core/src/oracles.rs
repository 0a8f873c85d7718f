//! Brute-force reference implementations for cross-checking metrics.
//!
//! Test support only (enable the `oracles` feature). These deliberately
//! share no code with [`crate::metrics`]: n-grams are joined strings
//! counted by linear scans, and the confusion matrix is materialized
//! in full. Slow and obvious on purpose.

use std::collections::BTreeSet;

/// Corpus BLEU-4 recomputed from first principles: for every order,
/// enumerate candidate n-grams as joined strings, clip each count by a
/// fresh scan of the reference, apply add-one smoothing to zero-match
/// orders, and multiply the geometric mean by the brevity penalty.
pub fn bleu_oracle(candidates: &[String], references: &[String]) -> f64 {
    assert_eq!(candidates.len(), references.len());
    assert!(!candidates.is_empty());

    fn grams(tokens: &[&str], n: usize) -> Vec<String> {
        if tokens.len() < n {
            return Vec::new();
        }
        (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
    }

    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    let mut precisions = Vec::with_capacity(4);
    for n in 1..=4usize {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (c, r) in candidates.iter().zip(references) {
            let ct: Vec<&str> = c.split_whitespace().collect();
            let rt: Vec<&str> = r.split_whitespace().collect();
            if n == 1 {
                cand_len += ct.len();
                ref_len += rt.len();
            }
            let cg = grams(&ct, n);
            let rg = grams(&rt, n);
            total += cg.len();
            let distinct: BTreeSet<&String> = cg.iter().collect();
            for gram in distinct {
                let in_cand = cg.iter().filter(|g| *g == gram).count();
                let in_ref = rg.iter().filter(|g| *g == gram).count();
                matched += in_cand.min(in_ref);
            }
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        precisions.push(p);
    }
    if cand_len == 0 {
        return 0.0;
    }
    let geo: f64 = precisions.iter().map(|p| p.powf(0.25)).product();
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    bp * geo
}

/// Macro-F1 from an explicit confusion matrix. Predictions outside
/// `label_set` are first rewritten to `invalid_label`. The average
/// runs over classes present in golds or rewritten predictions.
pub fn macro_f1_oracle(
    preds: &[String],
    golds: &[String],
    label_set: &[String],
    invalid_label: &str,
) -> f64 {
    assert_eq!(preds.len(), golds.len());
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let known: Vec<String> = label_set.iter().map(|l| norm(l)).collect();
    let preds: Vec<String> = preds
        .iter()
        .map(|p| {
            let p = norm(p);
            if known.contains(&p) {
                p
            } else {
                invalid_label.to_string()
            }
        })
        .collect();
    let golds: Vec<String> = golds.iter().map(|g| norm(g)).collect();

    let mut classes: BTreeSet<String> = BTreeSet::new();
    classes.extend(preds.iter().cloned());
    classes.extend(golds.iter().cloned());
    let classes: Vec<String> = classes.into_iter().collect();

    // full confusion matrix: rows gold, columns predicted
    let k = classes.len();
    let idx = |c: &str| classes.iter().position(|x| x == c).unwrap();
    let mut matrix = vec![vec![0usize; k]; k];
    for (p, g) in preds.iter().zip(&golds) {
        matrix[idx(g)][idx(p)] += 1;
    }

    let mut f1_sum = 0.0;
    for (c, class) in classes.iter().enumerate() {
        let tp = matrix[c][c];
        let row: usize = matrix[c].iter().sum(); // gold occurrences
        let col: usize = matrix.iter().map(|r| r[c]).sum(); // predicted occurrences
        let precision = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        let recall = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        // classes that never occur contribute nothing and cannot
        // appear: every class came from preds or golds
        debug_assert!(row + col > 0, "class {class} in neither golds nor preds");
        f1_sum += f1;
    }
    f1_sum / k as f64
}
