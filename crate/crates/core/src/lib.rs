//! Resampling-free particle filtering.
//!
//! Particles are transported by a deterministic flow made of two parts: a
//! gradient-descent term on the current negative log-likelihood and an
//! attraction-repulsion interaction between particles, weighted by how each
//! particle's loss compares with the ensemble average. No particle is ever
//! duplicated or discarded, so the ensemble keeps its diversity in high
//! dimensional state spaces where resampling filters collapse.
//!
//! The crate is organised as:
//!
//! - [`flow`]: the particle flow update and the filtering loop.
//! - [`likelihoods`]: the [`LossModel`] interface and the bundled synthetic
//!   localization and pose registration problems.
//! - [`baselines`]: Monte Carlo Localization with systematic resampling and
//!   independent per-particle gradient descent.
//! - [`metrics`]: Gaussian fitting, closed-form KL divergence, exact
//!   assignment-based Wasserstein distance, the Wasserstein tracking bound and
//!   pose errors.
//! - [`bench`]: the experiment runner behind the `flowpf` command-line tool.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod flow;
pub mod likelihoods;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
pub use flow::{Ensemble, FlowConfig, LossEvaluation, StateVector};
pub use likelihoods::LossModel;
pub use metrics::GaussianSummary;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
