//! Task-level sampling and loss-weight schedules for the joint
//! training stage.
//!
//! Both curves are driven by the total step budget `T`: a warm-up
//! window `w = warmup_fraction * T` and a transition window
//! `m = transition_fraction * T`. The conditioning-swap probability
//! stays at zero through warm-up, ramps linearly to its ceiling over
//! the transition, then plateaus. The prediction-loss weight ramps
//! linearly to its maximum over the warm-up alone.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleError {
    BadFraction { field: &'static str, value: f64 },
    FractionsExceedOne { warmup: f64, transition: f64 },
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadFraction { field, value } => write!(f, "{field} = {value} out of range"),
            Self::FractionsExceedOne { warmup, transition } => {
                write!(f, "warmup {warmup} + transition {transition} exceeds 1")
            }
        }
    }
}

impl std::error::Error for ScheduleError {}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Total steps T of the joint stage.
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub transition_fraction: f64,
    pub pi_ceiling: f64,
    pub alpha_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            total_steps: 5000,
            warmup_fraction: 0.05,
            transition_fraction: 0.60,
            pi_ceiling: 0.9,
            alpha_max: 0.7,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction.is_finite()) {
            return Err(ScheduleError::BadFraction { field: "warmup_fraction", value: self.warmup_fraction });
        }
        if !(self.transition_fraction > 0.0 && self.transition_fraction.is_finite()) {
            return Err(ScheduleError::BadFraction {
                field: "transition_fraction",
                value: self.transition_fraction,
            });
        }
        if self.warmup_fraction + self.transition_fraction > 1.0 + 1e-12 {
            return Err(ScheduleError::FractionsExceedOne {
                warmup: self.warmup_fraction,
                transition: self.transition_fraction,
            });
        }
        if !(0.0..=1.0).contains(&self.pi_ceiling) {
            return Err(ScheduleError::BadFraction { field: "pi_ceiling", value: self.pi_ceiling });
        }
        if !(0.0..=1.0).contains(&self.alpha_max) {
            return Err(ScheduleError::BadFraction { field: "alpha_max", value: self.alpha_max });
        }
        Ok(())
    }

    /// Warm-up window length `w` in steps.
    pub fn warmup_steps(&self) -> f64 {
        self.warmup_fraction * self.total_steps as f64
    }

    /// Transition window length `m` in steps.
    pub fn transition_steps(&self) -> f64 {
        self.transition_fraction * self.total_steps as f64
    }

    /// First step at which the sampling schedule has fully plateaued.
    pub fn plateau_start(&self) -> f64 {
        self.warmup_steps() + self.transition_steps()
    }
}

/// Conditioning-swap probability at step `t`: zero through warm-up,
/// `(t - w) / m` capped at the ceiling during the transition, then the
/// ceiling.
pub fn pi_at(t: usize, cfg: &ScheduleConfig) -> f64 {
    let t = t as f64;
    let w = cfg.warmup_steps();
    let m = cfg.transition_steps();
    if t < w {
        0.0
    } else if t < w + m {
        cfg.pi_ceiling.min((t - w) / m)
    } else {
        cfg.pi_ceiling
    }
}

/// Prediction-loss weight at step `t`: linear ramp from 0 to
/// `alpha_max` over the warm-up window, constant afterwards.
pub fn alpha_at(t: usize, cfg: &ScheduleConfig) -> f64 {
    let t = t as f64;
    let w = cfg.warmup_steps();
    if t < w {
        (t / w) * cfg.alpha_max
    } else {
        cfg.alpha_max
    }
}

/// Live schedule values at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub t: usize,
    pub pi: f64,
    pub alpha: f64,
}

impl ScheduleState {
    pub fn at(t: usize, cfg: &ScheduleConfig) -> Self {
        ScheduleState { t, pi: pi_at(t, cfg), alpha: alpha_at(t, cfg) }
    }
}
