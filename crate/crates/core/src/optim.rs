//! Adaptive-moment optimizer with decoupled weight decay, plus
//! global-norm gradient clipping.
//!
//! The update takes the bias-corrected adaptive step from the
//! gradients first, then applies weight decay multiplicatively to the
//! parameters themselves rather than folding it into the gradient.

use std::fmt;

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    GradCountMismatch { params: usize, grads: usize },
    ShapeMismatch { name: String, param: Vec<usize>, grad: Vec<usize> },
    NonFiniteGrad { name: String },
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GradCountMismatch { params, grads } => {
                write!(f, "{grads} gradients for {params} parameters")
            }
            Self::ShapeMismatch { name, param, grad } => {
                write!(f, "gradient shape {grad:?} does not match parameter '{name}' {param:?}")
            }
            Self::NonFiniteGrad { name } => {
                write!(f, "non-finite gradient for parameter '{name}'")
            }
        }
    }
}

impl std::error::Error for OptimError {}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            grad_clip: Some(1.0),
        }
    }
}

/// Per-parameter moment estimates plus the step counter and
/// hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    pub config: OptimizerConfig,
}

impl OptimizerState {
    /// Fresh state with zeroed moments matching the store's shapes.
    pub fn new(params: &ParamStore, config: OptimizerConfig) -> Self {
        let first_moment = params.ids().map(|id| Tensor::zeros(params.get(id).shape().to_vec())).collect();
        let second_moment = params.ids().map(|id| Tensor::zeros(params.get(id).shape().to_vec())).collect();
        OptimizerState { first_moment, second_moment, step: 0, config }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer update. `grads` must align with the store's
/// registration order and cover every parameter.
pub fn optimizer_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
) -> Result<(), OptimError> {
    if grads.len() != params.len() {
        return Err(OptimError::GradCountMismatch { params: params.len(), grads: grads.len() });
    }
    for (id, grad) in params.ids().zip(grads) {
        let p = params.get(id);
        if p.shape() != grad.shape() {
            return Err(OptimError::ShapeMismatch {
                name: params.name(id).to_string(),
                param: p.shape().to_vec(),
                grad: grad.shape().to_vec(),
            });
        }
        if !grad.all_finite() {
            return Err(OptimError::NonFiniteGrad { name: params.name(id).to_string() });
        }
    }

    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    let decay = 1.0 - c.lr * c.weight_decay;

    for (id, grad) in params.ids().zip(grads) {
        let m = state.first_moment[id.0].data_mut();
        let v = state.second_moment[id.0].data_mut();
        let theta = params.get_mut(id).data_mut();
        for i in 0..theta.len() {
            let g = grad.data()[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
            theta[i] *= decay;
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(vec![1], vec![v]).unwrap());
        store
    }

    #[test]
    fn zero_grads_no_decay_is_fixed_point() {
        let mut store = one_param_store(1.5);
        let cfg = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut state = OptimizerState::new(&store, cfg);
        let grads = vec![Tensor::zeros(vec![1])];
        optimizer_step(&mut store, &grads, &mut state).unwrap();
        assert_eq!(store.get(crate::params::ParamId(0)).data()[0], 1.5);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_grads_decay_scales_params() {
        let mut store = one_param_store(2.0);
        let cfg = OptimizerConfig { lr: 0.1, weight_decay: 0.05, ..Default::default() };
        let mut state = OptimizerState::new(&store, cfg);
        let grads = vec![Tensor::zeros(vec![1])];
        optimizer_step(&mut store, &grads, &mut state).unwrap();
        let got = store.get(crate::params::ParamId(0)).data()[0];
        assert!((got - 2.0 * (1.0 - 0.1 * 0.05)).abs() < 1e-15);
    }

    #[test]
    fn single_scalar_hand_update() {
        let (lr, b1, b2, eps, wd) = (0.1, 0.9, 0.999, 1e-8, 0.01);
        let mut store = one_param_store(1.0);
        let cfg = OptimizerConfig { lr, beta1: b1, beta2: b2, epsilon: eps, weight_decay: wd, grad_clip: None };
        let mut state = OptimizerState::new(&store, cfg);
        let g = 0.5;
        let grads = vec![Tensor::from_vec(vec![1], vec![g]).unwrap()];
        optimizer_step(&mut store, &grads, &mut state).unwrap();

        // Hand-rolled update equations, step 1.
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let theta = (1.0 - lr * m_hat / (v_hat.sqrt() + eps)) * (1.0 - lr * wd);
        let got = store.get(crate::params::ParamId(0)).data()[0];
        assert!((got - theta).abs() < 1e-15, "got {got}, want {theta}");
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            store.add("w", Tensor::from_vec(vec![2, 2], vec![0.3, -0.7, 1.1, 0.0]).unwrap());
            let mut state = OptimizerState::new(&store, OptimizerConfig::default());
            let grads = vec![Tensor::from_vec(vec![2, 2], vec![0.01, -0.2, 0.3, 0.4]).unwrap()];
            for _ in 0..10 {
                optimizer_step(&mut store, &grads, &mut state).unwrap();
            }
            store.get(crate::params::ParamId(0)).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "identical inputs must give bit-identical parameters");
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let mut store = one_param_store(1.0);
        let mut state = OptimizerState::new(&store, OptimizerConfig::default());
        let grads = vec![Tensor::zeros(vec![2])];
        let err = optimizer_step(&mut store, &grads, &mut state).unwrap_err();
        match err {
            OptimError::ShapeMismatch { name, .. } => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut store = one_param_store(1.0);
        let mut state = OptimizerState::new(&store, OptimizerConfig::default());
        let grads = vec![Tensor::from_raw(vec![1], vec![f64::NAN])];
        let err = optimizer_step(&mut store, &grads, &mut state).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteGrad { name } if name == "w"));
    }

    #[test]
    fn clip_rescales_to_threshold() {
        let mut grads = vec![Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap()];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = grads[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);

        let mut small = vec![Tensor::from_vec(vec![2], vec![0.3, 0.4]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }
}
