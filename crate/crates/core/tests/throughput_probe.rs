//! Manual timing probe for sizing the desk-scale defaults.
//! Run with: cargo test -p r2d-core --test throughput_probe -- --ignored --nocapture

use std::time::Instant;

use r2d_core::data::{generate_synthetic, GrammarConfig};
use r2d_core::schedule::ScheduleConfig;
use r2d_core::train::{run_training, PipelineConfig, TrainConfig, Variant};

#[test]
#[ignore]
fn measure_learnability() {
    let grammar = GrammarConfig::default();
    let examples = generate_synthetic(&grammar, 1500).unwrap();
    let (train, val) = examples.split_at(1200);

    let cfg = PipelineConfig {
        variant: Variant::NoStage1,
        seed: 0,
        schedule: ScheduleConfig { total_steps: 1500, ..Default::default() },
        train: TrainConfig { batch_size: 8, ..Default::default() },
        ..Default::default()
    };
    let started = Instant::now();
    let out = run_training(&cfg, train, &val.to_vec(), &grammar.label_names(), None).unwrap();
    println!(
        "learnability: best F1 {:.4} at step {} (elapsed {:?}, early stop {:?})",
        out.report.selected_score,
        out.report.selected_step,
        started.elapsed(),
        out.report.early_stop_step,
    );
    for v in &out.report.validation {
        println!("  step {:>5}  f1 {:.4}", v.step, v.score);
    }
}

#[test]
#[ignore]
fn measure_full_recipe_consistency() {
    let grammar = GrammarConfig::default();
    let examples = generate_synthetic(&grammar, 1500).unwrap();
    let (train, val) = examples.split_at(1200);

    let cfg = PipelineConfig {
        variant: Variant::Full,
        seed: 0,
        ..Default::default()
    };
    let started = Instant::now();
    let out = run_training(&cfg, train, &val.to_vec(), &grammar.label_names(), Some(&grammar.marker_table())).unwrap();
    let model = out.checkpoint.model().unwrap();
    let vocab = &out.checkpoint.vocab;

    let mut labels = Vec::new();
    let mut rationales = Vec::new();
    for ex in &val[..150] {
        let inf = r2d_core::train::infer(&model, vocab, &ex.input, &cfg.train).unwrap();
        labels.push(inf.label);
        rationales.push(inf.rationale);
    }
    let consistency = r2d_core::metrics::rationale_label_consistency(
        &rationales,
        &labels,
        &grammar.marker_table(),
    )
    .unwrap();
    println!(
        "full recipe: best F1 {:.4}, consistency {:.4}, elapsed {:?}",
        out.report.selected_score,
        consistency,
        started.elapsed()
    );
    for (l, r) in labels.iter().zip(&rationales).take(6) {
        println!("  label: {l}\n  rationale: {r}");
    }
}

#[test]
#[ignore]
fn measure_ablation_scale_gap() {
    let grammar = GrammarConfig::default();
    let examples = generate_synthetic(&grammar, 1800).unwrap();
    let (train, rest) = examples.split_at(1200);
    let (val, test) = rest.split_at(300);

    for variant in [Variant::Full, Variant::NoScheduledSampling] {
        let cfg = PipelineConfig {
            variant,
            seed: 0,
            schedule: ScheduleConfig { total_steps: 2400, ..Default::default() },
            train: TrainConfig { batch_size: 8, stage1_steps: 800, ..Default::default() },
            ..Default::default()
        };
        let started = Instant::now();
        let out = run_training(&cfg, train, &val.to_vec(), &grammar.label_names(), Some(&grammar.marker_table())).unwrap();
        let model = out.checkpoint.model().unwrap();
        let vocab = &out.checkpoint.vocab;
        let mut labels = Vec::new();
        let mut rationales = Vec::new();
        for ex in test {
            let inf = r2d_core::train::infer(&model, vocab, &ex.input, &cfg.train).unwrap();
            labels.push(inf.label);
            rationales.push(inf.rationale);
        }
        let consistency = r2d_core::metrics::rationale_label_consistency(
            &rationales,
            &labels,
            &grammar.marker_table(),
        )
        .unwrap();
        println!(
            "{:?}: F1 {:.4}, consistency {:.4}, elapsed {:?}",
            variant,
            out.report.selected_score,
            consistency,
            started.elapsed()
        );
    }
}

#[test]
#[ignore]
fn measure_stage2_step_rate() {
    let grammar = GrammarConfig::default();
    let examples = generate_synthetic(&grammar, 600).unwrap();
    let (train, val) = examples.split_at(500);

    let cfg = PipelineConfig {
        variant: Variant::NoStage1,
        seed: 0,
        schedule: ScheduleConfig { total_steps: 60, ..Default::default() },
        train: TrainConfig { batch_size: 8, stage2_eval_interval: 30, ..Default::default() },
        ..Default::default()
    };
    let started = Instant::now();
    let out = run_training(&cfg, train, &val.to_vec(), &grammar.label_names(), None).unwrap();
    let elapsed = started.elapsed();
    let steps = out.report.stage2.len();
    println!(
        "stage2: {steps} steps in {:?} -> {:.1} ms/step ({} validations of {} examples)",
        elapsed,
        elapsed.as_secs_f64() * 1000.0 / steps as f64,
        out.report.validation.len(),
        val.len(),
    );
}
