//! Vertical split-learning simulator and label-leakage audit lab.
//!
//! Passive parties train local models on their feature columns and send a
//! scalar cut-layer value per example to the active party, which holds the
//! labels and returns per-example gradients. The crate implements an
//! adversarial defense (Wasserstein critic + generator + randomized-response
//! penalty with normalized, mutually-cancelling cut gradients), the
//! baselines it is compared against, gradient-based label-stealing attacks
//! and leakage metrics, and an experiment harness.
//!
//! Numerical building blocks ([`nn`], [`metrics`]) are generic over the
//! scalar type; the protocol and training loop run in `f64`.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod scalar;
pub mod trainer;

pub use baselines::MethodKind;
pub use data::Dataset;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use trainer::{GafmConfig, SplitModel};

pub type Matrix = nn::Matrix<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type Gradients = nn::Gradients<f64>;

pub type Matrix32 = nn::Matrix<f32>;
pub type MlpParams32 = nn::MlpParams<f32>;
pub type AdamState32 = nn::AdamState<f32>;
