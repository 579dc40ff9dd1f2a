//! Target densities: unnormalised log-density, analytic score, and the
//! exact normalised density where one is known.

mod mog;
mod phi4;

pub use mog::MixtureOfGaussians;
pub use phi4::Phi4Lattice;

use crate::error::{Error, Result};

/// An unnormalised density `p̃(x) = exp(-H(x))` on `ℝᵈ`.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// `log p̃(x)`. Targets with a known normaliser return the normalised
    /// log-density here.
    fn log_unnorm(&self, x: &[f64]) -> Result<f64>;

    /// `∇ₓ log p̃(x)`, in closed form.
    fn score(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn has_exact_density(&self) -> bool {
        false
    }

    fn exact_log_density(&self, _x: &[f64]) -> Result<f64> {
        Err(Error::UnsupportedForTarget("exact_log_density"))
    }

    /// Log-density used when scoring flow samples against the target:
    /// the exact one when available, the unnormalised one otherwise.
    fn reference_log_density(&self, x: &[f64]) -> Result<f64> {
        if self.has_exact_density() {
            self.exact_log_density(x)
        } else {
            self.log_unnorm(x)
        }
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_unnorm(&self, x: &[f64]) -> Result<f64> {
        (**self).log_unnorm(x)
    }
    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).score(x)
    }
    fn has_exact_density(&self) -> bool {
        (**self).has_exact_density()
    }
    fn exact_log_density(&self, x: &[f64]) -> Result<f64> {
        (**self).exact_log_density(x)
    }
}

/// `log Σ exp(vᵢ)` without overflow. Returns `-inf` for an empty slice or
/// when every term is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
