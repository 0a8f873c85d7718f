//! Joint label-prediction and rationale-generation training on a
//! compact from-scratch encoder-decoder.
//!
//! The pipeline trains in two stages: a rationale-only foundation
//! stage, then joint optimization of prediction and label-conditioned
//! explanation where the conditioning label is gradually swapped from
//! the gold label to the model's own greedy prediction. Everything is
//! deterministic given a seed: the tensor math runs in 64-bit floats
//! on a reverse-mode tape, generation is greedy, and all randomness
//! flows from one splittable generator.

pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod model;
pub mod optim;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod params;
pub mod prompt;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
