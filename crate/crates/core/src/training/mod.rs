//! Objectives, the score-matching weight schedule, and the training loop.

mod adam;
mod loss;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use loss::{loss_fkl, loss_rkl, loss_scorenf, loss_sm, LossGrad, ScoreNfLoss};
pub use schedule::{anneal_lambda, LambdaSchedule};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::rng::{derive_seed, seeded, standard_normal_vec, Rng};
use crate::targets::TargetDensity;

/// Losses above this magnitude count as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "FKL")]
    Fkl,
    #[serde(rename = "RKL")]
    Rkl,
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "ScoreNF")]
    ScoreNf,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [Self::Fkl, Self::Rkl, Self::Sm, Self::ScoreNf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fkl => "FKL",
            Self::Rkl => "RKL",
            Self::Sm => "SM",
            Self::ScoreNf => "ScoreNF",
        }
    }

    /// Whether the objective reads target samples.
    pub fn needs_samples(self) -> bool {
        !matches!(self, Self::Rkl)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown objective `{s}`; valid values: FKL, RKL, SM, ScoreNF"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub schedule: LambdaSchedule,
}

impl Objective {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            schedule: LambdaSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Validation NLL is computed every this many steps (0 disables).
    pub val_every: usize,
    /// At most this many validation samples are scored.
    pub val_samples: usize,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            steps: 2000,
            adam: AdamConfig::default(),
            seed: 0,
            val_every: 100,
            val_samples: 1000,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("batch_size and steps must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Fixed, ordered collection of target samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Vec<f64>>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let dim = samples.first().map_or(0, Vec::len);
        if samples.is_empty() || dim == 0 {
            return Err(Error::InvalidConfig("dataset is empty".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("dataset sample {i} is not finite")));
            }
        }
        Ok(Self { samples, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::InvalidConfig(format!(
                "requested {n} samples from a dataset of {}",
                self.len()
            )));
        }
        Dataset::new(self.samples[..n].to_vec())
    }
}

/// Epoch-wise shuffled minibatches.
struct BatchSampler<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl<'a> BatchSampler<'a> {
    fn new(data: &'a Dataset, seed: u64) -> Self {
        let mut s = Self {
            data,
            order: (0..data.len()).collect(),
            cursor: data.len(),
            rng: seeded(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self, n: usize) -> Vec<Vec<f64>> {
        if self.cursor + n > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.cursor..self.cursor + n]
            .iter()
            .map(|&i| self.data.samples[i].clone())
            .collect();
        self.cursor += n;
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_rkl: Option<f64>,
    pub loss_sm: Option<f64>,
    pub loss_fkl: Option<f64>,
    pub lambda1: f64,
    pub val_nll: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestCheckpoint {
    pub step: usize,
    pub val_nll: f64,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub flow: FlowModel,
    pub history: Vec<HistoryRow>,
    /// Lowest validation NLL seen, when a validation set was supplied.
    pub best: Option<BestCheckpoint>,
}

impl TrainOutcome {
    /// Flow carrying the best-validation parameters, or the final flow.
    pub fn best_flow(&self) -> FlowModel {
        let mut f = self.flow.clone();
        if let Some(b) = &self.best {
            f.params_mut()
                .set_values(&b.params)
                .expect("same architecture");
        }
        f
    }
}

/// Mean `-log q` over (at most `cap` of) the samples.
pub fn mean_nll(flow: &FlowModel, samples: &[Vec<f64>], cap: usize) -> Result<f64> {
    let n = samples.len().min(cap.max(1));
    let mut total = 0.0;
    for x in &samples[..n] {
        total -= flow.log_density(x)?;
    }
    Ok(total / n as f64)
}

fn clip(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(c) = max_norm {
        let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if n > c {
            let k = c / n;
            grad.iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Trains `flow` in place of a copy and returns the result with its
/// per-step history.
///
/// Deterministic for a fixed `config.seed`: minibatch order and base draws
/// come from streams derived from it.
pub fn train(
    flow: &FlowModel,
    target: &dyn TargetDensity,
    dataset: Option<&Dataset>,
    validation: Option<&Dataset>,
    objective: &Objective,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    objective.schedule.validate()?;
    crate::error::check_dim(flow.dim(), target.dim())?;
    let kind = objective.kind;
    let uses_samples = match kind {
        ObjectiveKind::ScoreNf => objective.schedule.initial > 0.0,
        k => k.needs_samples(),
    };
    let sampler_data = if uses_samples {
        let d = dataset.ok_or_else(|| {
            Error::InvalidConfig(format!("objective {kind} needs a training dataset"))
        })?;
        crate::error::check_dim(flow.dim(), d.dim())?;
        if d.len() < config.batch_size {
            return Err(Error::InvalidConfig(format!(
                "ensemble of {} samples is smaller than the batch size {}",
                d.len(),
                config.batch_size
            )));
        }
        Some(d)
    } else {
        None
    };
    if let Some(v) = validation {
        crate::error::check_dim(flow.dim(), v.dim())?;
    }

    let mut flow = flow.clone();
    let mut opt = Adam::new(config.adam, flow.n_params());
    let mut batches = sampler_data.map(|d| BatchSampler::new(d, derive_seed(config.seed, "batches", 0)));
    let mut base_rng = seeded(derive_seed(config.seed, "base", 0));
    let mut history = Vec::with_capacity(config.steps);
    let mut best: Option<BestCheckpoint> = None;
    let total = config.steps;

    for step in 0..total {
        let lambda = objective.schedule.at(step, total);
        let mut z_batch = || -> Vec<Vec<f64>> {
            (0..config.batch_size)
                .map(|_| standard_normal_vec(&mut base_rng, flow.dim()))
                .collect()
        };
        let (mut row, mut grad) = match kind {
            ObjectiveKind::Fkl => {
                let x = batches.as_mut().expect("dataset checked").next_batch(config.batch_size);
                let l = loss_fkl(&flow, &x)?;
                (row(step, l.value, None, None, Some(l.value), 0.0), l.grad)
            }
            ObjectiveKind::Rkl => {
                let z = z_batch();
                let l = loss_rkl(&flow, target, &z)?;
                (row(step, l.value, Some(l.value), None, None, 0.0), l.grad)
            }
            ObjectiveKind::Sm => {
                let x = batches.as_mut().expect("dataset checked").next_batch(config.batch_size);
                let l = loss_sm(&flow, target, &x)?;
                (row(step, l.value, None, Some(l.value), None, 0.0), l.grad)
            }
            ObjectiveKind::ScoreNf => {
                let z = z_batch();
                let x = match batches.as_mut() {
                    Some(b) if lambda > 0.0 => b.next_batch(config.batch_size),
                    _ => Vec::new(),
                };
                let l = loss::combine_scorenf(&flow, target, &z, &x, lambda)?;
                (row(step, l.total, Some(l.rkl), l.sm, None, lambda), l.grad)
            }
        };
        if !row.loss_total.is_finite() || row.loss_total.abs() > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence {
                step,
                loss: row.loss_total,
            });
        }
        clip(&mut grad, config.grad_clip);
        opt.step(flow.params_mut().values_mut(), &grad);

        let last = step + 1 == total;
        if let Some(v) = validation {
            if (config.val_every > 0 && (step + 1) % config.val_every == 0) || last {
                let nll = mean_nll(&flow, v.samples(), config.val_samples)?;
                row.val_nll = Some(nll);
                if best.as_ref().is_none_or(|b| nll < b.val_nll) {
                    best = Some(BestCheckpoint {
                        step: step + 1,
                        val_nll: nll,
                        params: flow.params().values().to_vec(),
                    });
                }
            }
        }
        history.push(row);
    }

    Ok(TrainOutcome {
        flow,
        history,
        best,
    })
}

fn row(
    step: usize,
    total: f64,
    rkl: Option<f64>,
    sm: Option<f64>,
    fkl: Option<f64>,
    lambda1: f64,
) -> HistoryRow {
    HistoryRow {
        step,
        loss_total: total,
        loss_rkl: rkl,
        loss_sm: sm,
        loss_fkl: fkl,
        lambda1,
        val_nll: None,
    }
}
