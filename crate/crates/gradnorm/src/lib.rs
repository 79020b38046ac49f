//! Adaptive loss-weight balancing for multitask training, with baselines and
//! a synthetic-benchmark harness.

pub mod balancer;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod toytasks;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::MlpModel;
pub use rng::Rng;
pub use scalar::Scalar;

/// Concrete aliases for the two supported scalar widths.
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Model32 = MlpModel<f32>;
pub type Model64 = MlpModel<f64>;
