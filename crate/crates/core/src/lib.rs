//! Normalizing flows trained against unnormalised target densities.
//!
//! The crate combines a reverse-KL objective with exact score matching
//! against the analytic target score, anneals the score-matching weight,
//! and corrects the trained flow with an independence Metropolis–Hastings
//! sampler. Mixture-of-Gaussians and φ⁴ lattice targets are included, as
//! are the evaluation metrics (NLL, reverse NLL, importance ESS, acceptance
//! rate, mode occupancy).

pub mod error;
pub mod flow;
pub mod grad;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod targets;
pub mod training;

pub use error::{Error, Result};
pub use flow::{FlowCheckpoint, FlowConfig, FlowModel, MaskKind};
pub use targets::{MixtureOfGaussians, Phi4Lattice, TargetDensity};
