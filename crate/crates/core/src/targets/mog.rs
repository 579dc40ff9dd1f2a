use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;

use super::{log_sum_exp, TargetDensity};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng::seeded;

/// Mixture of isotropic Gaussians sharing one standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOfGaussians {
    means: Vec<Vec<f64>>,
    sigma: f64,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    dim: usize,
}

impl MixtureOfGaussians {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if means.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} means but {} weights",
                means.len(),
                weights.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidConfig("component means must share a nonzero dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidConfig("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("mixture weights sum to {total}, not 1")));
        }
        for i in 0..means.len() {
            for j in 0..i {
                if means[i] == means[j] {
                    return Err(Error::InvalidConfig(format!(
                        "component means {j} and {i} coincide"
                    )));
                }
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            means,
            sigma,
            weights,
            log_weights,
            dim,
        })
    }

    /// Equal-weight mixture.
    pub fn equal(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let k = means.len();
        Self::new(means, sigma, vec![1.0 / k as f64; k])
    }

    /// Four modes at `(±a, ±a)`.
    pub fn mog4(a: f64, sigma: f64) -> Result<Self> {
        Self::equal(
            vec![vec![a, a], vec![-a, a], vec![-a, -a], vec![a, -a]],
            sigma,
        )
    }

    /// Eight modes equally spaced on the circle of radius `a`.
    pub fn mog8(a: f64, sigma: f64) -> Result<Self> {
        let means = (0..8)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 8.0;
                vec![a * t.cos(), a * t.sin()]
            })
            .collect();
        Self::equal(means, sigma)
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![vec![0.0; dim]], 1.0, vec![1.0]).expect("valid single component")
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    /// Per-component `log wₖ - ‖x - μₖ‖² / 2σ²`.
    fn component_logits(&self, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        self.means
            .iter()
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let r2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                lw - r2 * inv
            })
            .collect()
    }

    fn log_norm(&self) -> f64 {
        -0.5 * self.dim as f64 * (2.0 * PI * self.sigma * self.sigma).ln()
    }

    /// I.i.d. draws: categorical component, then an isotropic Gaussian.
    pub fn sample_exact(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        let pick = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        (0..n)
            .map(|_| {
                let k = pick.sample(&mut rng);
                self.means[k]
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + self.sigma * e
                    })
                    .collect()
            })
            .collect()
    }

    /// Index of the nearest component mean; ties go to the lowest index.
    pub fn assign_mode(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, m) in self.means.iter().enumerate() {
            let r2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < best.1 {
                best = (k, r2);
            }
        }
        best.0
    }

    /// Differential entropy estimate `-E_p[log p]` from `n` exact draws.
    pub fn entropy_estimate(&self, n: usize, seed: u64) -> f64 {
        let xs = self.sample_exact(n, seed);
        let total: f64 = xs
            .iter()
            .map(|x| self.exact_log_density(x).expect("finite samples"))
            .sum();
        -total / n as f64
    }
}

impl TargetDensity for MixtureOfGaussians {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_unnorm(&self, x: &[f64]) -> Result<f64> {
        self.exact_log_density(x)
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_finite(x, "mixture score input")?;
        let logits = self.component_logits(x);
        let lse = log_sum_exp(&logits);
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let mut s = vec![0.0; self.dim];
        for (m, l) in self.means.iter().zip(&logits) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            for i in 0..self.dim {
                s[i] -= r * (x[i] - m[i]) * inv_var;
            }
        }
        Ok(s)
    }

    fn has_exact_density(&self) -> bool {
        true
    }

    fn exact_log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_finite(x, "mixture log-density input")?;
        Ok(log_sum_exp(&self.component_logits(x)) + self.log_norm())
    }
}
