//! Amortized Bayesian inference for two-level hierarchical models.
//!
//! A local summary network maps each group to a vector, a set network maps
//! those vectors to a dataset summary, and two conditional normalizing
//! flows model `p(tau, omega | data)` and `p(lambda_j | tau, omega, group j)`.
//! Training uses simulations from a [`generative::ModelSpec`]; sampling
//! follows the same two-stage factorization.

pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod generative;
pub mod nn;
pub mod parallel;
pub mod posterior;
pub mod rng;
pub mod training;
pub mod zoo;

/// Library version, recorded in checkpoints and run records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use generative::{Dataset, GroupData, ModelSpec, SimItem};
pub use parallel::Execution;
pub use posterior::{PosteriorDraws, PosteriorSampler};
pub use training::{Checkpoint, TrainConfig};
pub use zoo::ModelConfig;
