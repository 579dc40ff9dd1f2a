//! Training losses and their parameter gradients.
//!
//! Every loss is a batch mean of a per-sample term. Per-sample gradients are
//! accumulated chunk by chunk in parallel and the chunk sums are added in
//! chunk order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::schedule::LambdaSchedule;
use crate::error::{Error, Result};
use crate::flow::{standard_normal_log_density, FlowModel};
use crate::grad::{Dual, Scalar, Tape};
use crate::targets::TargetDensity;

const CHUNK: usize = 16;

/// Loss value and its gradient with respect to the flat flow parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn batch_reduce<T, S, F, G>(items: &[T], n_params: usize, per_item: F, extract: G) -> Result<(f64, Vec<f64>)>
where
    T: Sync,
    S: Scalar,
    F: Fn(&T, &mut [S]) -> Result<f64> + Sync,
    G: Fn(S) -> f64 + Sync,
{
    let parts: Vec<(f64, Vec<f64>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![S::zero(); n_params];
            let mut v = 0.0;
            for it in chunk {
                v += per_item(it, &mut g)?;
            }
            Ok((v, g.into_iter().map(&extract).collect()))
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; n_params];
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((value, grad))
}

fn mean(value: f64, mut grad: Vec<f64>, n: usize, sign: f64) -> LossGrad {
    let k = sign / n as f64;
    grad.iter_mut().for_each(|g| *g *= k);
    LossGrad {
        value: value / n as f64,
        grad,
    }
}

fn nonempty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(Error::InvalidConfig(format!("{what} batch is empty")))
    } else {
        Ok(())
    }
}

/// Forward KL up to the target entropy: `-mean log q(x)` over target samples.
pub fn loss_fkl(flow: &FlowModel, batch: &[Vec<f64>]) -> Result<LossGrad> {
    nonempty(batch, "FKL")?;
    let params = flow.params().values();
    let (v, g) = batch_reduce(
        batch,
        params.len(),
        |x: &Vec<f64>, g: &mut [f64]| {
            let mut tape = Tape::<f64>::new(params);
            let xv = tape.input(0, x);
            let lq = flow.record_log_density(&mut tape, xv)?;
            tape.backward(lq, g);
            Ok(-tape.scalar(lq))
        },
        |s| s,
    )?;
    // per-sample terms are -log q; the accumulated gradient is of +log q
    Ok(mean(v, g, batch.len(), -1.0))
}

/// Reverse KL, `mean[log p_z(z) − log|det ∂f/∂z| − log p̃(f(z))]`, with the
/// pathwise gradient.
///
/// The target enters the tape through its first-order expansion around the
/// mapped point, `log p̃(x₀) + s(x₀)·(x − x₀)`, which has the exact value and
/// the exact first derivative of `log p̃ ∘ f`.
pub fn loss_rkl(flow: &FlowModel, target: &dyn TargetDensity, z_batch: &[Vec<f64>]) -> Result<LossGrad> {
    nonempty(z_batch, "RKL")?;
    crate::error::check_dim(flow.dim(), target.dim())?;
    let params = flow.params().values();
    let (v, g) = batch_reduce(
        z_batch,
        params.len(),
        |z: &Vec<f64>, g: &mut [f64]| {
            let mut tape = Tape::<f64>::new(params);
            let zv = tape.input(0, z);
            let (x, log_det) = flow.record_forward(&mut tape, zv)?;
            let x0 = tape.value(x).to_vec();
            let log_p = target.log_unnorm(&x0)?;
            if !log_p.is_finite() {
                return Err(Error::Domain(format!("target log-density is {log_p} at a flow sample")));
            }
            let score = tape.constant(&target.score(&x0)?);
            let lin = tape.dot(score, x)?;
            let theta_part = tape.add(log_det, lin)?;
            let out = tape.neg(theta_part);
            tape.backward(out, g);
            Ok(standard_normal_log_density(z) - tape.scalar(log_det) - log_p)
        },
        |s| s,
    )?;
    Ok(mean(v, g, z_batch.len(), 1.0))
}

/// Exact score matching, `mean ‖∇ₓ log q(x) − s(x)‖²` over target samples.
///
/// With `r = ∇ₓ log q − s`, the parameter gradient of `‖r‖²` is the
/// derivative of `∇_θ log q` along `2r` in input space. That is obtained by
/// a reverse pass over dual numbers whose input tangents are `2r`.
pub fn loss_sm(flow: &FlowModel, target: &dyn TargetDensity, x_batch: &[Vec<f64>]) -> Result<LossGrad> {
    nonempty(x_batch, "SM")?;
    crate::error::check_dim(flow.dim(), target.dim())?;
    let params = flow.params().values();
    let (v, g) = batch_reduce(
        x_batch,
        params.len(),
        |x: &Vec<f64>, g: &mut [Dual]| {
            let (_, model) = flow.log_density_and_score(x)?;
            let truth = target.score(x)?;
            let r: Vec<f64> = model.iter().zip(&truth).map(|(a, b)| a - b).collect();
            let seeded: Vec<Dual> = x.iter().zip(&r).map(|(&xi, &ri)| Dual::new(xi, 2.0 * ri)).collect();
            let mut tape = Tape::<Dual>::new(params);
            let xv = tape.input(0, &seeded);
            let lq = flow.record_log_density(&mut tape, xv)?;
            tape.backward(lq, g);
            Ok(r.iter().map(|v| v * v).sum())
        },
        |d: Dual| d.eps,
    )?;
    Ok(mean(v, g, x_batch.len(), 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNfLoss {
    pub total: f64,
    pub rkl: f64,
    /// `None` when the weight is zero and the term was skipped.
    pub sm: Option<f64>,
    pub lambda: f64,
    pub grad: Vec<f64>,
}

/// `L_RKL + λ(step)·L_SM` with the weight taken from `schedule`.
pub fn loss_scorenf(
    flow: &FlowModel,
    target: &dyn TargetDensity,
    z_batch: &[Vec<f64>],
    x_batch: &[Vec<f64>],
    schedule: &LambdaSchedule,
    step: usize,
    total_steps: usize,
) -> Result<ScoreNfLoss> {
    let lambda = schedule.at(step, total_steps);
    combine_scorenf(flow, target, z_batch, x_batch, lambda)
}

pub(crate) fn combine_scorenf(
    flow: &FlowModel,
    target: &dyn TargetDensity,
    z_batch: &[Vec<f64>],
    x_batch: &[Vec<f64>],
    lambda: f64,
) -> Result<ScoreNfLoss> {
    let rkl = loss_rkl(flow, target, z_batch)?;
    if lambda == 0.0 {
        return Ok(ScoreNfLoss {
            total: rkl.value,
            rkl: rkl.value,
            sm: None,
            lambda,
            grad: rkl.grad,
        });
    }
    let sm = loss_sm(flow, target, x_batch)?;
    let grad = rkl
        .grad
        .iter()
        .zip(&sm.grad)
        .map(|(a, b)| a + lambda * b)
        .collect();
    Ok(ScoreNfLoss {
        total: rkl.value + lambda * sm.value,
        rkl: rkl.value,
        sm: Some(sm.value),
        lambda,
        grad,
    })
}
