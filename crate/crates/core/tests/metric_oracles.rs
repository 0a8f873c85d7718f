//! Randomized cross-checks of the metric implementations against the
//! brute-force oracles.
#![cfg(feature = "oracles")]

use r2d_core::metrics::{bleu, macro_f1, INVALID_LABEL};
use r2d_core::oracles::{bleu_oracle, macro_f1_oracle};
use r2d_core::Rng;

const WORDS: [&str; 12] =
    ["fever", "cough", "rest", "severe", "mild", "pain", "clinic", "home", "call", "now", "and", "the"];

fn random_sentence(rng: &mut Rng, min: usize, max: usize) -> String {
    let len = min + rng.below(max - min + 1);
    (0..len).map(|_| WORDS[rng.below(WORDS.len())]).collect::<Vec<_>>().join(" ")
}

#[test]
fn bleu_matches_oracle_on_random_pairs() {
    let mut rng = Rng::new(2024);
    for case in 0..120 {
        let pairs = 1 + rng.below(6);
        let mut cands = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..pairs {
            cands.push(random_sentence(&mut rng, 1, 14));
            refs.push(random_sentence(&mut rng, 1, 14));
        }
        let got = bleu(&cands, &refs).unwrap();
        let want = bleu_oracle(&cands, &refs);
        assert!(
            (got - want).abs() <= 1e-9,
            "case {case}: bleu {got} vs oracle {want}\ncands {cands:?}\nrefs {refs:?}"
        );
    }
}

#[test]
fn macro_f1_matches_oracle_on_random_labelings() {
    let mut rng = Rng::new(77);
    let label_set: Vec<String> = (0..5).map(|i| format!("class {i}")).collect();
    for case in 0..120 {
        let n = 1 + rng.below(40);
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for _ in 0..n {
            golds.push(label_set[rng.below(label_set.len())].clone());
            // occasionally predict garbage to exercise the invalid path
            if rng.below(10) == 0 {
                preds.push("not a label".to_string());
            } else {
                preds.push(label_set[rng.below(label_set.len())].clone());
            }
        }
        let (got, table) = macro_f1(&preds, &golds, &label_set).unwrap();
        let want = macro_f1_oracle(&preds, &golds, &label_set, INVALID_LABEL);
        assert!(
            (got - want).abs() <= 1e-12,
            "case {case}: macro f1 {got} vs oracle {want}"
        );
        let mean = table.iter().map(|c| c.f1).sum::<f64>() / table.len() as f64;
        assert!((got - mean).abs() <= 1e-12);
    }
}
