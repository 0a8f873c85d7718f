//! The two-stage training engine.
//!
//! Stage one teaches rationale generation alone ("explain: {x}" to the
//! gold rationale) with loss-based early stopping. Stage two jointly
//! optimizes label prediction and label-conditioned explanation: per
//! step the conditioning label is the gold label or the model's own
//! greedy prediction, swapped with probability `pi_t`, and the two
//! losses combine as `alpha_t * L_pred + (1 - alpha_t) * L_expl`.
//! Validation scores only the prediction task (Macro-F1); the
//! delayed early stop arms once the sampling schedule plateaus, and
//! the highest-F1 checkpoint is returned.
//!
//! Ablation variants reuse the same engine with parts switched off.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Example;
use crate::metrics::{macro_f1, MetricsError};
use crate::model::{ModelError, ModelParams};
use crate::optim::{clip_global_norm, optimizer_step, OptimError, OptimizerConfig, OptimizerState};
use crate::params::ParamStore;
use crate::prompt::{format_prompt, PromptError, PromptKind};
use crate::rng::Rng;
use crate::schedule::{alpha_at, pi_at, ScheduleConfig};
use crate::tape::{NodeId, Tape, TapeError};
use crate::tensor::Tensor;
use crate::vocab::Vocab;

/// Strict-improvement margin for early stopping; ties are
/// non-improvements.
pub const IMPROVEMENT_EPSILON: f64 = 1e-6;

#[derive(Debug)]
pub enum TrainError {
    EmptyTrainSet,
    EmptyValSet,
    Diverged { stage: &'static str, step: usize },
    Model(ModelError),
    Optim(OptimError),
    Metrics(MetricsError),
    Prompt(PromptError),
    Tape(TapeError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyTrainSet => write!(f, "training set is empty"),
            Self::EmptyValSet => write!(f, "validation set is empty"),
            Self::Diverged { stage, step } => {
                write!(f, "non-finite loss in {stage} at step {step}")
            }
            Self::Model(e) => write!(f, "{e}"),
            Self::Optim(e) => write!(f, "{e}"),
            Self::Metrics(e) => write!(f, "{e}"),
            Self::Prompt(e) => write!(f, "{e}"),
            Self::Tape(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}
impl From<OptimError> for TrainError {
    fn from(e: OptimError) -> Self {
        TrainError::Optim(e)
    }
}
impl From<MetricsError> for TrainError {
    fn from(e: MetricsError) -> Self {
        TrainError::Metrics(e)
    }
}
impl From<PromptError> for TrainError {
    fn from(e: PromptError) -> Self {
        TrainError::Prompt(e)
    }
}
impl From<TapeError> for TrainError {
    fn from(e: TapeError) -> Self {
        TrainError::Tape(e)
    }
}

/// Training recipe variants for the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Stage-1 foundation, then the full joint stage.
    Full,
    /// Single-task label prediction, no rationales.
    Sft,
    /// Joint stage from random init.
    NoStage1,
    /// Full recipe with the conditioning swap forced off (pi = 0).
    NoScheduledSampling,
    /// Full recipe with the loss weight pinned at its maximum from
    /// step 0 (the pi schedule is unchanged).
    NoWarmup,
    /// Single-stage multi-task with an unconditioned explanation
    /// prompt and fixed equal loss weights.
    DssStyle,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::Full,
    Variant::Sft,
    Variant::NoStage1,
    Variant::NoScheduledSampling,
    Variant::NoWarmup,
    Variant::DssStyle,
];

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Sft => "sft",
            Variant::NoStage1 => "no-stage1",
            Variant::NoScheduledSampling => "no-scheduled-sampling",
            Variant::NoWarmup => "no-warmup",
            Variant::DssStyle => "dss-style",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        ALL_VARIANTS.into_iter().find(|v| v.name() == s)
    }

    fn uses_stage1(&self) -> bool {
        matches!(self, Variant::Full | Variant::NoScheduledSampling | Variant::NoWarmup)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub stage1_steps: usize,
    pub stage1_patience: usize,
    /// 0 selects `max(1, stage1_steps / 10)`.
    pub stage1_eval_interval: usize,
    pub stage2_patience: usize,
    /// 0 selects `max(1, total_steps / 50)`.
    pub stage2_eval_interval: usize,
    pub max_label_len: usize,
    pub max_rationale_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            stage1_steps: 1200,
            stage1_patience: 3,
            stage1_eval_interval: 0,
            stage2_patience: 5,
            stage2_eval_interval: 0,
            max_label_len: 8,
            max_rationale_len: 24,
        }
    }
}

/// Everything a reproducible run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub seed: u64,
    pub model: crate::model::ModelConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: Variant::Full,
            seed: 0,
            model: crate::model::ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Step {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Step {
    pub step: usize,
    pub pi: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_pred: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_expl: Option<f64>,
    pub l_total: f64,
    /// How many batch examples were conditioned on the model's own
    /// prediction this step.
    pub predicted_branch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub step: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub seed: u64,
    pub stage1: Vec<Stage1Step>,
    pub stage1_validation: Vec<ValPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_selected_step: Option<usize>,
    pub stage2: Vec<Stage2Step>,
    /// Joint-stage validation Macro-F1 history.
    pub validation: Vec<ValPoint>,
    /// Step of the selected (highest validation F1) checkpoint.
    pub selected_step: usize,
    pub selected_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_step: Option<usize>,
    pub predicted_branch_total: usize,
}

impl TrainReport {
    fn new(variant: Variant, seed: u64) -> Self {
        TrainReport {
            variant: variant.name().to_string(),
            seed,
            stage1: Vec::new(),
            stage1_validation: Vec::new(),
            stage1_selected_step: None,
            stage2: Vec::new(),
            validation: Vec::new(),
            selected_step: 0,
            selected_score: 0.0,
            early_stop_step: None,
            predicted_branch_total: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Which conditioning fed the explanation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    Gold,
    Predicted,
}

/// Draws the conditioning label: with probability `pi` the model's own
/// greedy prediction (decoded off-tape, so no gradient flows through
/// it), otherwise the gold label.
pub fn choose_conditioning_label(
    example: &Example,
    pi: f64,
    rng: &mut Rng,
    model: &ModelParams,
    vocab: &Vocab,
    max_label_len: usize,
) -> Result<(String, Conditioning), TrainError> {
    let u = rng.uniform();
    if u < pi {
        let prompt = format_prompt(&PromptKind::Predict, &example.input)?;
        let ids = model.greedy_decode(&vocab.tokenize(&prompt), max_label_len)?;
        Ok((vocab.detokenize(&ids), Conditioning::Predicted))
    } else {
        Ok((example.label.clone(), Conditioning::Gold))
    }
}

/// Greedy label predictions for a whole slice, in order.
pub fn predict_labels(
    model: &ModelParams,
    vocab: &Vocab,
    examples: &[Example],
    max_label_len: usize,
) -> Result<Vec<String>, TrainError> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let prompt = format_prompt(&PromptKind::Predict, &ex.input)?;
        let ids = model.greedy_decode(&vocab.tokenize(&prompt), max_label_len)?;
        out.push(vocab.detokenize(&ids));
    }
    Ok(out)
}

/// Two-step inference: greedy label, then a rationale conditioned on
/// that prediction (never the gold label).
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub label: String,
    pub rationale: String,
    /// The exact prompt the rationale was decoded from.
    pub explain_prompt: String,
}

pub fn infer(
    model: &ModelParams,
    vocab: &Vocab,
    input: &str,
    cfg: &TrainConfig,
) -> Result<Inference, TrainError> {
    let pred_prompt = format_prompt(&PromptKind::Predict, input)?;
    let label_ids = model.greedy_decode(&vocab.tokenize(&pred_prompt), cfg.max_label_len)?;
    let label = vocab.detokenize(&label_ids);
    let explain_prompt = format_prompt(&PromptKind::ExplainGivenLabel(label.clone()), input)?;
    let rationale_ids =
        model.greedy_decode(&vocab.tokenize(&explain_prompt), cfg.max_rationale_len)?;
    let rationale = vocab.detokenize(&rationale_ids);
    Ok(Inference { label, rationale, explain_prompt })
}

/// Best-so-far snapshot during a stage.
struct Snapshot {
    store: ParamStore,
    step: usize,
    score: f64,
    rng_state: u64,
}

struct Cycler {
    order: Vec<usize>,
    at: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Cycler { order: (0..n).collect(), at: n }
    }

    fn next_batch(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            if self.at >= self.order.len() {
                rng.shuffle(&mut self.order);
                self.at = 0;
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

fn mean_on_tape(tape: &mut Tape, losses: &[NodeId]) -> Result<NodeId, TapeError> {
    let inv = 1.0 / losses.len() as f64;
    let mut acc: Option<NodeId> = None;
    for &l in losses {
        let scaled = tape.scale(l, inv);
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok(acc.expect("mean of at least one loss"))
}

fn collect_grads(
    tape: &mut Tape,
    staged: &crate::model::StagedParams,
    loss: NodeId,
) -> Result<Vec<Tensor>, TrainError> {
    let grads = tape.backward(loss)?;
    Ok(staged.bindings().map(|(_, node)| grads.dense(node)).collect())
}

/// Mean teacher-forced validation loss of rationale generation.
fn stage1_val_loss(
    model: &ModelParams,
    vocab: &Vocab,
    val: &[Example],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in val {
        let prompt = format_prompt(&PromptKind::ExplainUnconditioned, &ex.input)?;
        let mut tape = Tape::new();
        let loss =
            model.forward_nll(&mut tape, &vocab.tokenize(&prompt), &vocab.tokenize(&ex.rationale))?;
        total += tape.value(loss).scalar_value();
    }
    Ok(total / val.len() as f64)
}

/// Rationale-foundation training: minimizes the NLL of the gold
/// rationale given "explain: {x}", early-stops on validation loss
/// (patience counted in evaluations), and returns the
/// best-validation-loss snapshot.
fn train_stage1(
    model: &mut ModelParams,
    vocab: &Vocab,
    train: &[Example],
    val: &[Example],
    optimizer: &OptimizerConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
    report: &mut TrainReport,
) -> Result<Snapshot, TrainError> {
    let steps = cfg.stage1_steps;
    let interval = if cfg.stage1_eval_interval > 0 {
        cfg.stage1_eval_interval
    } else {
        (steps / 10).max(1)
    };
    let batch_size = cfg.batch_size.min(train.len()).max(1);
    let mut cycler = Cycler::new(train.len());
    let mut state = OptimizerState::new(&model.store, *optimizer);
    let mut best: Option<Snapshot> = None;
    let mut non_improving = 0usize;

    for t in 0..steps {
        let batch = cycler.next_batch(batch_size, rng);
        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let mut losses = Vec::with_capacity(batch.len());
        for &idx in &batch {
            let ex = &train[idx];
            let prompt = format_prompt(&PromptKind::ExplainUnconditioned, &ex.input)?;
            losses.push(model.forward_nll_on(
                &mut tape,
                &staged,
                &vocab.tokenize(&prompt),
                &vocab.tokenize(&ex.rationale),
            )?);
        }
        let loss = mean_on_tape(&mut tape, &losses)?;
        let loss_value = tape.value(loss).scalar_value();
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged { stage: "stage1", step: t });
        }
        report.stage1.push(Stage1Step { step: t, loss: loss_value });

        let mut grads = collect_grads(&mut tape, &staged, loss)?;
        if let Some(max_norm) = optimizer.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        optimizer_step(&mut model.store, &grads, &mut state)?;

        if (t + 1) % interval == 0 || t + 1 == steps {
            let val_loss = stage1_val_loss(model, vocab, val)?;
            report.stage1_validation.push(ValPoint { step: t, score: val_loss });
            let improved = best.as_ref().map_or(true, |b| val_loss < b.score);
            if improved {
                best = Some(Snapshot {
                    store: model.store.clone(),
                    step: t,
                    score: val_loss,
                    rng_state: rng.state(),
                });
                non_improving = 0;
            } else {
                non_improving += 1;
                if non_improving >= cfg.stage1_patience {
                    break;
                }
            }
        }
    }
    let best = best.expect("stage1 ran at least one evaluation");
    report.stage1_selected_step = Some(best.step);
    Ok(best)
}

/// What the explanation half of a joint step does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExplMode {
    /// "given label: {y~}, explain: {x}" with the scheduled swap.
    LabelConditioned,
    /// "explain: {x}" regardless of labels.
    Unconditioned,
    /// No explanation loss at all.
    Off,
}

struct Stage2Spec {
    total_steps: usize,
    zero_pi: bool,
    fixed_alpha: Option<f64>,
    expl: ExplMode,
    /// Early stopping counts evaluations from step 0 instead of
    /// waiting for the sampling plateau.
    arm_from_start: bool,
}

impl Variant {
    fn stage2_spec(&self, schedule: &ScheduleConfig) -> Stage2Spec {
        let t = schedule.total_steps;
        match self {
            Variant::Full | Variant::NoStage1 => Stage2Spec {
                total_steps: t,
                zero_pi: false,
                fixed_alpha: None,
                expl: ExplMode::LabelConditioned,
                arm_from_start: false,
            },
            Variant::NoScheduledSampling => Stage2Spec {
                total_steps: t,
                zero_pi: true,
                fixed_alpha: None,
                expl: ExplMode::LabelConditioned,
                arm_from_start: false,
            },
            Variant::NoWarmup => Stage2Spec {
                total_steps: t,
                zero_pi: false,
                fixed_alpha: Some(schedule.alpha_max),
                expl: ExplMode::LabelConditioned,
                arm_from_start: false,
            },
            Variant::Sft => Stage2Spec {
                total_steps: t,
                zero_pi: true,
                fixed_alpha: Some(1.0),
                expl: ExplMode::Off,
                arm_from_start: true,
            },
            Variant::DssStyle => Stage2Spec {
                total_steps: t,
                zero_pi: true,
                fixed_alpha: Some(0.5),
                expl: ExplMode::Unconditioned,
                arm_from_start: true,
            },
        }
    }
}

/// Joint optimization with task-level scheduled sampling. Returns the
/// highest-validation-F1 snapshot.
#[allow(clippy::too_many_arguments)]
fn train_stage2(
    model: &mut ModelParams,
    vocab: &Vocab,
    train: &[Example],
    val: &[Example],
    label_set: &[String],
    schedule: &ScheduleConfig,
    optimizer: &OptimizerConfig,
    cfg: &TrainConfig,
    spec: &Stage2Spec,
    rng: &mut Rng,
    report: &mut TrainReport,
) -> Result<Snapshot, TrainError> {
    let total = spec.total_steps;
    let interval = if cfg.stage2_eval_interval > 0 {
        cfg.stage2_eval_interval
    } else {
        (total / 50).max(1)
    };
    let arm_at = if spec.arm_from_start { 0.0 } else { schedule.plateau_start() };
    let batch_size = cfg.batch_size.min(train.len()).max(1);
    let mut cycler = Cycler::new(train.len());
    // Optimizer moments start fresh for the joint stage.
    let mut state = OptimizerState::new(&model.store, *optimizer);
    let golds: Vec<String> = val.iter().map(|e| e.label.clone()).collect();
    let mut best: Option<Snapshot> = None;
    let mut non_improving = 0usize;

    for t in 0..total {
        let pi = if spec.zero_pi { 0.0 } else { pi_at(t, schedule) };
        let alpha = spec.fixed_alpha.unwrap_or_else(|| alpha_at(t, schedule));

        let batch = cycler.next_batch(batch_size, rng);
        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let mut pred_losses = Vec::with_capacity(batch.len());
        let mut expl_losses = Vec::with_capacity(batch.len());
        let mut predicted_branch = 0usize;

        for &idx in &batch {
            let ex = &train[idx];
            let pred_prompt = format_prompt(&PromptKind::Predict, &ex.input)?;
            pred_losses.push(model.forward_nll_on(
                &mut tape,
                &staged,
                &vocab.tokenize(&pred_prompt),
                &vocab.tokenize(&ex.label),
            )?);

            let expl_prompt = match spec.expl {
                ExplMode::Off => None,
                ExplMode::Unconditioned => {
                    Some(format_prompt(&PromptKind::ExplainUnconditioned, &ex.input)?)
                }
                ExplMode::LabelConditioned => {
                    let (label, source) = choose_conditioning_label(
                        ex,
                        pi,
                        rng,
                        model,
                        vocab,
                        cfg.max_label_len,
                    )?;
                    predicted_branch += usize::from(source == Conditioning::Predicted);
                    Some(format_prompt(&PromptKind::ExplainGivenLabel(label), &ex.input)?)
                }
            };
            if let Some(prompt) = expl_prompt {
                expl_losses.push(model.forward_nll_on(
                    &mut tape,
                    &staged,
                    &vocab.tokenize(&prompt),
                    &vocab.tokenize(&ex.rationale),
                )?);
            }
        }

        let l_pred = mean_on_tape(&mut tape, &pred_losses)?;
        let (loss, l_pred_value, l_expl_value) = if expl_losses.is_empty() {
            (l_pred, tape.value(l_pred).scalar_value(), None)
        } else {
            let l_expl = mean_on_tape(&mut tape, &expl_losses)?;
            let weighted_pred = tape.scale(l_pred, alpha);
            let weighted_expl = tape.scale(l_expl, 1.0 - alpha);
            let total_loss = tape.add(weighted_pred, weighted_expl)?;
            (
                total_loss,
                tape.value(l_pred).scalar_value(),
                Some(tape.value(l_expl).scalar_value()),
            )
        };
        let l_total_value = tape.value(loss).scalar_value();
        if !l_total_value.is_finite() {
            return Err(TrainError::Diverged { stage: "stage2", step: t });
        }
        report.stage2.push(Stage2Step {
            step: t,
            pi,
            alpha,
            l_pred: Some(l_pred_value),
            l_expl: l_expl_value,
            l_total: l_total_value,
            predicted_branch,
        });
        report.predicted_branch_total += predicted_branch;

        let mut grads = collect_grads(&mut tape, &staged, loss)?;
        if let Some(max_norm) = optimizer.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        optimizer_step(&mut model.store, &grads, &mut state)?;

        if (t + 1) % interval == 0 || t + 1 == total {
            let preds = predict_labels(model, vocab, val, cfg.max_label_len)?;
            let (f1, _) = macro_f1(&preds, &golds, label_set)?;
            report.validation.push(ValPoint { step: t, score: f1 });
            let improved = best.as_ref().map_or(true, |b| f1 > b.score + IMPROVEMENT_EPSILON);
            if improved {
                best = Some(Snapshot {
                    store: model.store.clone(),
                    step: t,
                    score: f1,
                    rng_state: rng.state(),
                });
                non_improving = 0;
            } else if (t as f64) >= arm_at {
                non_improving += 1;
                if non_improving >= cfg.stage2_patience {
                    report.early_stop_step = Some(t);
                    break;
                }
            }
        }
    }
    Ok(best.expect("stage2 ran at least one evaluation"))
}

/// A finished run: the selected checkpoint, the stage-1 foundation
/// checkpoint when that stage ran, and the full report.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub stage1_checkpoint: Option<Checkpoint>,
    pub report: TrainReport,
}

/// Runs the configured variant end to end on pre-split data.
pub fn run_training(
    cfg: &PipelineConfig,
    train: &[Example],
    val: &[Example],
    label_set: &[String],
    markers: Option<&[(String, String)]>,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if val.is_empty() {
        return Err(TrainError::EmptyValSet);
    }
    cfg.schedule.validate().map_err(|e| {
        TrainError::Model(ModelError::BadConfig(format!("schedule: {e}")))
    })?;

    let vocab = Vocab::build(
        train
            .iter()
            .flat_map(|e| [e.input.as_str(), e.label.as_str(), e.rationale.as_str()]),
    );
    let mut model_config = cfg.model;
    model_config.vocab_size = vocab.size();

    let mut rng = Rng::new(cfg.seed);
    let mut model = ModelParams::init(model_config, &mut rng)?;
    let mut report = TrainReport::new(cfg.variant, cfg.seed);

    let make_checkpoint = |snap: &Snapshot| Checkpoint {
        model_config,
        vocab: vocab.clone(),
        label_set: label_set.to_vec(),
        markers: markers.map(|m| m.to_vec()),
        step: snap.step as u64,
        validation_score: snap.score,
        rng_state: snap.rng_state,
        store: snap.store.clone(),
    };

    let stage1_checkpoint = if cfg.variant.uses_stage1() {
        let best = train_stage1(
            &mut model,
            &vocab,
            train,
            val,
            &cfg.optimizer,
            &cfg.train,
            &mut rng,
            &mut report,
        )?;
        model.store = best.store.clone();
        Some(make_checkpoint(&best))
    } else {
        None
    };

    let spec = cfg.variant.stage2_spec(&cfg.schedule);
    let best = train_stage2(
        &mut model,
        &vocab,
        train,
        val,
        label_set,
        &cfg.schedule,
        &cfg.optimizer,
        &cfg.train,
        &spec,
        &mut rng,
        &mut report,
    )?;
    report.selected_step = best.step;
    report.selected_score = best.score;
    let checkpoint = make_checkpoint(&best);
    Ok(TrainOutcome { checkpoint, stage1_checkpoint, report })
}
