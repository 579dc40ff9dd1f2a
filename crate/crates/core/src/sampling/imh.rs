use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::flow::FlowModel;
use crate::rng::{derive_seed, seeded, Rng};
use crate::targets::TargetDensity;

/// `min(1, p̃(x')q(x) / (p̃(x)q(x')))` from log values. Normalising
/// constants of `p̃` cancel.
pub fn imh_accept_prob(log_p_current: f64, log_p_proposed: f64, log_q_current: f64, log_q_proposed: f64) -> Result<f64> {
    let all = [log_p_current, log_p_proposed, log_q_current, log_q_proposed];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite log value in IMH ratio: {all:?}")));
    }
    let log_ratio = (log_p_proposed - log_p_current) - (log_q_proposed - log_q_current);
    Ok(if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() })
}

/// Independence Metropolis–Hastings chain state.
#[derive(Clone, Debug)]
pub struct ImhChain {
    x: Vec<f64>,
    log_p: f64,
    log_q: f64,
    accepted: usize,
    proposed: usize,
    rng: Rng,
}

impl ImhChain {
    /// Starts the chain at `x` with its cached log values. The initial
    /// state is not counted as a proposal.
    pub fn new(x: Vec<f64>, log_p: f64, log_q: f64, seed: u64) -> Self {
        Self {
            x,
            log_p,
            log_q,
            accepted: 0,
            proposed: 0,
            rng: seeded(seed),
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn log_p(&self) -> f64 {
        self.log_p
    }

    pub fn log_q(&self) -> f64 {
        self.log_q
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn proposed(&self) -> usize {
        self.proposed
    }

    /// One accept/reject step for an independent proposal `x'` with its
    /// target and proposal log-densities. Returns whether it was accepted.
    pub fn step(&mut self, x: Vec<f64>, log_p: f64, log_q: f64) -> Result<bool> {
        let a = imh_accept_prob(self.log_p, log_p, self.log_q, log_q)?;
        let u: f64 = self.rng.random();
        self.proposed += 1;
        let accept = u < a;
        if accept {
            self.x = x;
            self.log_p = log_p;
            self.log_q = log_q;
            self.accepted += 1;
        }
        Ok(accept)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImhRun {
    /// Chain state after every step.
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub proposed: usize,
}

impl ImhRun {
    /// Acceptance rate in percent.
    pub fn ar(&self) -> f64 {
        crate::metrics::ar_of_chain(self.accepted, self.proposed)
    }
}

/// IMH with the flow as proposal. The first flow draw is taken as the
/// initial state unconditionally; `n_steps` proposals follow.
pub fn run_imh(flow: &FlowModel, target: &dyn TargetDensity, n_steps: usize, seed: u64) -> Result<ImhRun> {
    check_dim(flow.dim(), target.dim())?;
    if n_steps == 0 {
        return Err(Error::InvalidConfig("IMH needs at least one step".into()));
    }
    let draws = flow.sample(n_steps + 1, derive_seed(seed, "imh-proposals", 0))?;
    let mut it = draws.into_iter();
    let (x0, lq0) = it.next().expect("n_steps + 1 draws");
    let lp0 = target.log_unnorm(&x0)?;
    let mut chain = ImhChain::new(x0, lp0, lq0, derive_seed(seed, "imh-accept", 0));
    let mut states = Vec::with_capacity(n_steps);
    for (x, lq) in it {
        let lp = target.log_unnorm(&x)?;
        chain.step(x, lp, lq)?;
        states.push(chain.state().to_vec());
    }
    Ok(ImhRun {
        states,
        accepted: chain.accepted(),
        proposed: chain.proposed(),
    })
}
