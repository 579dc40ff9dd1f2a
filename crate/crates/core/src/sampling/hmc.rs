use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{seeded, standard_normal_vec};
use crate::targets::TargetDensity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            leapfrog_steps: 10,
            burn_in: 1000,
            thinning: 5,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "HMC step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.leapfrog_steps == 0 || self.thinning == 0 {
            return Err(Error::InvalidConfig(
                "HMC needs at least one leapfrog step and thinning >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn finite_state(x: &[f64], p: &[f64]) -> Result<()> {
    if x.iter().chain(p).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("leapfrog produced a non-finite state".into()))
    }
}

/// Velocity-Verlet integration of `dx/dt = p`, `dp/dt = ∇ log p̃(x)`.
pub fn leapfrog(
    target: &dyn TargetDensity,
    x: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(target.dim(), x.len())?;
    check_dim(target.dim(), momentum.len())?;
    let mut x = x.to_vec();
    let mut p = momentum.to_vec();
    if steps == 0 {
        return Ok((x, p));
    }
    let half = 0.5 * step_size;
    let mut force = target.score(&x)?;
    for _ in 0..steps {
        for (pi, fi) in p.iter_mut().zip(&force) {
            *pi += half * fi;
        }
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += step_size * pi;
        }
        finite_state(&x, &p)?;
        force = target.score(&x)?;
        for (pi, fi) in p.iter_mut().zip(&force) {
            *pi += half * fi;
        }
        finite_state(&x, &p)?;
    }
    Ok((x, p))
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmcRun {
    pub samples: Vec<Vec<f64>>,
    pub accepted: usize,
    pub proposed: usize,
}

impl HmcRun {
    pub fn acceptance_rate(&self) -> f64 {
        100.0 * self.accepted as f64 / self.proposed.max(1) as f64
    }
}

/// Metropolis-adjusted HMC with identity mass, started at the origin.
///
/// Runs `burn_in` trajectories, then keeps every `thinning`-th state until
/// `n` states are collected.
pub fn hmc_sample(target: &dyn TargetDensity, n: usize, config: &HmcConfig) -> Result<Vec<Vec<f64>>> {
    Ok(hmc_run(target, n, config, None)?.samples)
}

pub fn hmc_run(
    target: &dyn TargetDensity,
    n: usize,
    config: &HmcConfig,
    init: Option<&[f64]>,
) -> Result<HmcRun> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("HMC needs n >= 1".into()));
    }
    let d = target.dim();
    let mut x = match init {
        Some(v) => {
            check_dim(d, v.len())?;
            v.to_vec()
        }
        None => vec![0.0; d],
    };
    let mut log_p = target.log_unnorm(&x)?;
    let mut rng = seeded(config.seed);
    let mut samples = Vec::with_capacity(n);
    let (mut accepted, mut proposed) = (0, 0);
    let total = config.burn_in + n * config.thinning;
    for it in 0..total {
        let p0 = standard_normal_vec(&mut rng, d);
        let (x1, p1) = leapfrog(target, &x, &p0, config.step_size, config.leapfrog_steps)?;
        let log_p1 = target.log_unnorm(&x1)?;
        // H = -log p̃(x) + |p|²/2
        let delta = (-log_p1 + kinetic(&p1)) - (-log_p + kinetic(&p0));
        let u: f64 = rng.random();
        proposed += 1;
        if delta <= 0.0 || u < (-delta).exp() {
            x = x1;
            log_p = log_p1;
            accepted += 1;
        }
        if it >= config.burn_in && (it - config.burn_in + 1) % config.thinning == 0 {
            samples.push(x.clone());
        }
    }
    Ok(HmcRun {
        samples,
        accepted,
        proposed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::MixtureOfGaussians;

    #[test]
    fn zero_steps_is_identity() {
        let t = MixtureOfGaussians::standard_normal(2);
        let (x, p) = leapfrog(&t, &[1.0, 2.0], &[0.5, -0.5], 0.1, 0).unwrap();
        assert_eq!((x, p), (vec![1.0, 2.0], vec![0.5, -0.5]));
    }

    #[test]
    fn rejects_invalid_configs() {
        let t = MixtureOfGaussians::standard_normal(1);
        let bad = HmcConfig { step_size: 0.0, ..Default::default() };
        assert!(hmc_sample(&t, 10, &bad).is_err());
        let bad = HmcConfig { thinning: 0, ..Default::default() };
        assert!(hmc_sample(&t, 10, &bad).is_err());
        assert!(hmc_sample(&t, 0, &HmcConfig::default()).is_err());
    }

    #[test]
    fn collects_requested_count_deterministically() {
        let t = MixtureOfGaussians::standard_normal(3);
        let cfg = HmcConfig { burn_in: 10, thinning: 3, seed: 4, ..Default::default() };
        let a = hmc_run(&t, 25, &cfg, None).unwrap();
        assert_eq!(a.samples.len(), 25);
        assert_eq!(a.proposed, 10 + 75);
        assert_eq!(a.samples, hmc_sample(&t, 25, &cfg).unwrap());
    }
}
