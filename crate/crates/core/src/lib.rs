//! Unsupervised domain adaptation for video transformers at desk scale.
//!
//! The crate bundles a small reverse-mode tensor engine, a spatio-temporal
//! video transformer, the cross-domain information-bottleneck alignment loss
//! with its pseudo-label pairing and source feature queue, five baseline
//! alignment losses, a synthetic domain-shifted video benchmark, and the
//! two-phase trainer driving all of them.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision used for training (`f32`) and for gradient checks (`f64`).

pub mod align;
pub mod cli;
pub mod baselines;
pub mod data;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result, TensorError};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
