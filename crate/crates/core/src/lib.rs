//! Compositional score-based sampling of tall-data posteriors.
//!
//! Per-observation diffusion scores `∇ log p_t(θ_t | x_j)` are combined into a
//! score for `p(θ | x_1, …, x_n)` and fed to backward samplers. The
//! analytic Gaussian and Gaussian-mixture tasks make every quantity exact,
//! so each rule can be checked against ground truth.

pub mod compose;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod score;
pub mod tasks;

pub use error::{Error, Result};
