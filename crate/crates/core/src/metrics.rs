//! Evaluation metrics: NLL, reverse NLL, importance-weight ESS, IMH
//! acceptance rate, and mode occupancy, plus multi-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::FlowModel;
use crate::rng::derive_seed;
use crate::sampling::run_imh;
use crate::targets::{log_sum_exp, MixtureOfGaussians, TargetDensity};

/// `-mean log q(x)` over held-out target samples.
pub fn nll(flow: &FlowModel, test_samples: &[Vec<f64>]) -> Result<f64> {
    if test_samples.is_empty() {
        return Err(Error::InvalidConfig("NLL needs at least one test sample".into()));
    }
    let mut total = 0.0;
    for x in test_samples {
        total += flow.log_density(x)?;
    }
    Ok(-total / test_samples.len() as f64)
}

/// `-mean log p(x)` over `n` flow samples. Uses the exact target density
/// when known, the unnormalised one otherwise.
pub fn rnll(flow: &FlowModel, target: &dyn TargetDensity, n: usize, seed: u64) -> Result<f64> {
    let xs = flow_samples(flow, target, n, seed)?;
    rnll_of(&xs, target)
}

fn flow_samples(flow: &FlowModel, target: &dyn TargetDensity, n: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64)>> {
    check_dim(flow.dim(), target.dim())?;
    if n == 0 {
        return Err(Error::InvalidConfig("metric sample count must be positive".into()));
    }
    flow.sample(n, seed)
}

fn rnll_of(xs: &[(Vec<f64>, f64)], target: &dyn TargetDensity) -> Result<f64> {
    let mut total = 0.0;
    for (x, _) in xs {
        total += target.reference_log_density(x)?;
    }
    Ok(-total / xs.len() as f64)
}

/// ESS in percent from log importance weights: `100·(Σw)² / (n·Σw²)`.
pub fn ess_from_log_weights(log_w: &[f64]) -> Result<f64> {
    if log_w.is_empty() {
        return Err(Error::InvalidConfig("ESS needs at least one weight".into()));
    }
    if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Domain("importance weights must be finite or zero".into()));
    }
    let lse = log_sum_exp(log_w);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    if log_w.iter().all(|&v| v == log_w[0]) {
        return Ok(100.0);
    }
    let doubled: Vec<f64> = log_w.iter().map(|v| 2.0 * v).collect();
    let lse2 = log_sum_exp(&doubled);
    let ratio = (2.0 * lse - lse2 - (log_w.len() as f64).ln()).exp();
    Ok((100.0 * ratio).min(100.0))
}

/// Importance-weight ESS (percent of `n`) with `w = p̃ / q` on flow samples.
pub fn ess(flow: &FlowModel, target: &dyn TargetDensity, n: usize, seed: u64) -> Result<f64> {
    let xs = flow_samples(flow, target, n, seed)?;
    ess_of(&xs, target)
}

fn ess_of(xs: &[(Vec<f64>, f64)], target: &dyn TargetDensity) -> Result<f64> {
    let log_w = xs
        .iter()
        .map(|(x, lq)| Ok(target.log_unnorm(x)? - lq))
        .collect::<Result<Vec<f64>>>()?;
    ess_from_log_weights(&log_w)
}

/// Acceptance rate in percent.
pub fn ar_of_chain(accepted: usize, proposed: usize) -> f64 {
    assert!(proposed > 0, "acceptance rate needs at least one proposal");
    100.0 * accepted as f64 / proposed as f64
}

/// Nearest-mean occupancy fractions of `samples`.
pub fn mode_fractions(target: &MixtureOfGaussians, samples: &[Vec<f64>]) -> Vec<f64> {
    let mut counts = vec![0usize; target.n_components()];
    for x in samples {
        counts[target.assign_mode(x)] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Occupancy fractions of `n` flow samples.
pub fn mode_report(flow: &FlowModel, target: &MixtureOfGaussians, n: usize, seed: u64) -> Result<Vec<f64>> {
    let xs: Vec<Vec<f64>> = flow_samples(flow, target, n, seed)?
        .into_iter()
        .map(|(x, _)| x)
        .collect();
    Ok(mode_fractions(target, &xs))
}

/// Number of modes whose occupancy reaches half their mixture weight.
pub fn covered_modes(target: &MixtureOfGaussians, fractions: &[f64]) -> usize {
    fractions
        .iter()
        .zip(target.weights())
        .filter(|(f, w)| **f >= 0.5 * **w)
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nll: f64,
    pub rnll: f64,
    pub ess: f64,
    pub ar: f64,
    pub mode_occupancy: Option<Vec<f64>>,
}

/// Runs the full metric suite. Flow samples for RNLL/ESS/occupancy share
/// one stream; the IMH chain uses its own.
pub fn evaluate(
    flow: &FlowModel,
    target: &dyn TargetDensity,
    mog: Option<&MixtureOfGaussians>,
    test_samples: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let xs = flow_samples(flow, target, n, derive_seed(seed, "eval-samples", 0))?;
    let imh = run_imh(flow, target, n, derive_seed(seed, "eval-imh", 0))?;
    let mode_occupancy = mog.map(|m| {
        let pts: Vec<Vec<f64>> = xs.iter().map(|(x, _)| x.clone()).collect();
        mode_fractions(m, &pts)
    });
    Ok(MetricsReport {
        nll: nll(flow, test_samples)?,
        rnll: rnll_of(&xs, target)?,
        ess: ess_of(&xs, target)?,
        ar: imh.ar(),
        mode_occupancy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    /// Mean and `sd / √n` with the unbiased sample standard deviation.
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InsufficientSeeds(n));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            stderr: var.sqrt() / (n as f64).sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub nll: MeanStderr,
    pub rnll: MeanStderr,
    pub ess: MeanStderr,
    pub ar: MeanStderr,
    pub seeds: Vec<u64>,
}

pub fn aggregate(reports: &[MetricsReport], seeds: &[u64]) -> Result<AggregateReport> {
    let col = |f: fn(&MetricsReport) -> f64| -> Result<MeanStderr> {
        MeanStderr::of(&reports.iter().map(f).collect::<Vec<_>>())
    };
    Ok(AggregateReport {
        nll: col(|r| r.nll)?,
        rnll: col(|r| r.rnll)?,
        ess: col(|r| r.ess)?,
        ar: col(|r| r.ar)?,
        seeds: seeds.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnosis {
    Matched,
    ModeCollapse,
    ModeCovering,
    /// Both NLL and RNLL far from the oracle.
    Poor,
}

impl Diagnosis {
    pub fn label(self) -> &'static str {
        match self {
            Self::Matched => "matched",
            Self::ModeCollapse => "mode collapse",
            Self::ModeCovering => "mode covering",
            Self::Poor => "poor",
        }
    }
}

/// Reads NLL and RNLL together against the target entropy `oracle`
/// (the value both take for a perfect model): high NLL with near-oracle
/// RNLL is collapse, near-oracle NLL with high RNLL is covering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisThresholds {
    pub nll_excess: f64,
    pub rnll_excess: f64,
}

impl Default for DiagnosisThresholds {
    fn default() -> Self {
        Self {
            nll_excess: 1.0,
            rnll_excess: 1.0,
        }
    }
}

pub fn diagnose(nll: f64, rnll: f64, oracle: f64, th: &DiagnosisThresholds) -> Diagnosis {
    let high_nll = nll - oracle > th.nll_excess;
    let high_rnll = rnll - oracle > th.rnll_excess;
    match (high_nll, high_rnll) {
        (false, false) => Diagnosis::Matched,
        (true, false) => Diagnosis::ModeCollapse,
        (false, true) => Diagnosis::ModeCovering,
        (true, true) => Diagnosis::Poor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use std::f64::consts::PI;

    #[test]
    fn nll_identity_origin() {
        let f = FlowModel::new(FlowConfig::new(2), 0).unwrap();
        assert!((nll(&f, &[vec![0.0, 0.0]]).unwrap() - (2.0 * PI).ln()).abs() < 1e-14);
        assert!((nll(&f, &[vec![0.0, 0.0]]).unwrap() - 1.8379).abs() < 1e-4);
    }

    #[test]
    fn ess_hand_values() {
        assert_eq!(ess_from_log_weights(&[0.3; 10]).unwrap(), 100.0);
        let mut lw = vec![f64::NEG_INFINITY; 100];
        lw[0] = 0.0;
        assert!((ess_from_log_weights(&lw).unwrap() - 1.0).abs() < 1e-12);
        let lw: Vec<f64> = [2.0f64, 2.0, 1.0, 1.0].iter().map(|w| w.ln()).collect();
        assert!((ess_from_log_weights(&lw).unwrap() - 90.0).abs() < 1e-12);
        // huge log weights do not overflow
        let lw = [1000.0, 1000.0 + 2f64.ln(), 1000.0];
        let expect = 100.0 * 16.0 / (3.0 * 6.0);
        assert!((ess_from_log_weights(&lw).unwrap() - expect).abs() < 1e-10);
        assert_eq!(
            ess_from_log_weights(&[f64::NEG_INFINITY; 3]).unwrap_err(),
            Error::DegenerateWeights
        );
    }

    #[test]
    fn ar_definition() {
        assert!((ar_of_chain(887, 1000) - 88.7).abs() < 1e-12);
        assert_eq!(ar_of_chain(5, 5), 100.0);
    }

    #[test]
    fn aggregate_mean_and_stderr() {
        let r = |v: f64| MetricsReport { nll: v, rnll: 1.0, ess: 50.0, ar: 60.0, mode_occupancy: None };
        let a = aggregate(&[r(1.0), r(2.0), r(3.0)], &[1, 2, 3]).unwrap();
        assert_eq!(a.nll.mean, 2.0);
        assert!((a.nll.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.rnll.stderr, 0.0);
        assert_eq!(aggregate(&[r(1.0)], &[1]).unwrap_err(), Error::InsufficientSeeds(1));
    }

    #[test]
    fn collapsed_occupancy() {
        let m = MixtureOfGaussians::mog4(4.0, 0.5).unwrap();
        let pts = vec![vec![4.1, 3.9]; 50];
        let f = mode_fractions(&m, &pts);
        assert_eq!(f, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(covered_modes(&m, &f), 1);
        assert_eq!(f.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn diagnosis_quadrants() {
        let th = DiagnosisThresholds::default();
        assert_eq!(diagnose(2.9, 2.8, 2.84, &th), Diagnosis::Matched);
        assert_eq!(diagnose(5.0, 2.5, 2.84, &th), Diagnosis::ModeCollapse);
        assert_eq!(diagnose(3.0, 4.5, 2.84, &th), Diagnosis::ModeCovering);
        assert_eq!(diagnose(5.0, 4.5, 2.84, &th), Diagnosis::Poor);
    }
}
