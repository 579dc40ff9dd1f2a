//! Affine coupling flow over a standard-normal base.
//!
//! Each layer keeps the masked coordinates `x ⊙ b` fixed and maps the rest
//! as `x ⊙ exp(s) + t`, where `s` and `t` come from a two-hidden-layer tanh
//! network of `x ⊙ b`. The log-scale is bounded by `s_max · tanh(·)` and
//! both heads are zero-initialised, so a fresh flow is the identity.
//!
//! All maps are recorded on a [`Tape`]; the same code path serves plain
//! evaluation, parameter gradients, model scores and forward-over-reverse
//! products.

mod checkpoint;

pub use checkpoint::FlowCheckpoint;

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::grad::{ParameterStore, Scalar, Tape, Var};
use crate::rng::{seeded, standard_normal_vec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskKind {
    /// First and second halves of the coordinates alternate.
    Halves,
    /// Checkerboard over an `side × side` lattice, parity alternating.
    Checkerboard { side: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub s_max: f64,
    pub mask: MaskKind,
}

impl FlowConfig {
    /// Six layers, width 64, `s_max = 3`, half masks.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            layers: 6,
            hidden: 64,
            s_max: 3.0,
            mask: MaskKind::Halves,
        }
    }

    pub fn lattice(side: usize) -> Self {
        Self {
            mask: MaskKind::Checkerboard { side },
            ..Self::new(side * side)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("flow dimension must be positive".into()));
        }
        if self.layers > 0 && self.dim < 2 {
            return Err(Error::InvalidConfig(
                "coupling layers need at least two coordinates".into(),
            ));
        }
        if self.layers > 0 && self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::InvalidConfig(format!("s_max must be positive, got {}", self.s_max)));
        }
        if let MaskKind::Checkerboard { side } = self.mask {
            if side * side != self.dim {
                return Err(Error::InvalidConfig(format!(
                    "checkerboard side {side} does not match dimension {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    fn mask(&self, layer: usize) -> Vec<bool> {
        let parity = layer % 2 == 1;
        match self.mask {
            MaskKind::Halves => {
                let h = self.dim.div_ceil(2);
                (0..self.dim).map(|i| (i < h) != parity).collect()
            }
            MaskKind::Checkerboard { side } => (0..self.dim)
                .map(|l| ((l / side + l % side) % 2 == 0) != parity)
                .collect(),
        }
    }
}

/// Parameter offsets of one conditioner network.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Conditioner {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ws: usize,
    bs: usize,
    wt: usize,
    bt: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    /// `true` marks a coordinate that passes through unchanged.
    mask: Vec<bool>,
    frozen: Vec<f64>,
    active: Vec<f64>,
    scale_bound: Vec<f64>,
    cond: Conditioner,
}

impl CouplingLayer {
    fn new(mask: Vec<bool>, s_max: f64, cond: Conditioner) -> Result<Self> {
        if mask.iter().all(|&m| m) || mask.iter().all(|&m| !m) {
            return Err(Error::InvalidConfig("coupling mask must be mixed".into()));
        }
        let frozen: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let active: Vec<f64> = frozen.iter().map(|f| 1.0 - f).collect();
        let scale_bound = active.iter().map(|a| a * s_max).collect();
        Ok(Self {
            mask,
            frozen,
            active,
            scale_bound,
            cond,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    layers: Vec<CouplingLayer>,
    params: ParameterStore,
}

fn base_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

impl FlowModel {
    /// Fresh flow: hidden weights drawn uniformly with Glorot scaling from
    /// `seed`, output heads zeroed so the map starts as the identity.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.dim, config.hidden);
        let mut rng = seeded(seed);
        let mut glorot = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()
        };
        let mut params = ParameterStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for k in 0..config.layers {
            let cond = Conditioner {
                w1: params.allocate(format!("layer{k}.w1"), &glorot(d, h)),
                b1: params.allocate(format!("layer{k}.b1"), &vec![0.0; h]),
                w2: params.allocate(format!("layer{k}.w2"), &glorot(h, h)),
                b2: params.allocate(format!("layer{k}.b2"), &vec![0.0; h]),
                ws: params.allocate(format!("layer{k}.scale.w"), &vec![0.0; d * h]),
                bs: params.allocate(format!("layer{k}.scale.b"), &vec![0.0; d]),
                wt: params.allocate(format!("layer{k}.shift.w"), &vec![0.0; d * h]),
                bt: params.allocate(format!("layer{k}.shift.b"), &vec![0.0; d]),
            };
            layers.push(CouplingLayer::new(config.mask(k), config.s_max, cond)?);
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    /// Rebuilds a flow from its configuration and a flat parameter vector.
    pub fn from_parameters(config: FlowConfig, values: &[f64]) -> Result<Self> {
        let mut flow = Self::new(config, 0)?;
        flow.params.set_values(values)?;
        Ok(flow)
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Adds `N(0, scale²)` noise to every parameter, heads included.
    pub fn jitter(&mut self, scale: f64, seed: u64) {
        let mut rng = seeded(seed);
        let noise = standard_normal_vec(&mut rng, self.params.len());
        for (p, e) in self.params.values_mut().iter_mut().zip(noise) {
            *p += scale * e;
        }
    }

    fn record_conditioner<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        layer: &CouplingLayer,
        x: Var,
    ) -> Result<(Var, Var)> {
        let (d, h) = (self.config.dim, self.config.hidden);
        let c = layer.cond;
        let frozen = tape.constant(&layer.frozen);
        let xb = tape.mul(x, frozen)?;
        let a1 = tape.affine(xb, c.w1, c.b1, h, d)?;
        let h1 = tape.tanh(a1);
        let a2 = tape.affine(h1, c.w2, c.b2, h, h)?;
        let h2 = tape.tanh(a2);
        let sp = tape.affine(h2, c.ws, c.bs, d, h)?;
        let st = tape.tanh(sp);
        let bound = tape.constant(&layer.scale_bound);
        let s = tape.mul(st, bound)?;
        let tp = tape.affine(h2, c.wt, c.bt, d, h)?;
        let active = tape.constant(&layer.active);
        let t = tape.mul(tp, active)?;
        Ok((s, t))
    }

    /// Records `x = f(z)` and `log|det ∂f/∂z|`.
    pub fn record_forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, z: Var) -> Result<(Var, Var)> {
        let mut x = z;
        let mut log_det = tape.constant(&[0.0]);
        for layer in &self.layers {
            let (s, t) = self.record_conditioner(tape, layer, x)?;
            let es = tape.exp(s);
            let scaled = tape.mul(x, es)?;
            x = tape.add(scaled, t)?;
            let ls = tape.sum(s);
            log_det = tape.add(log_det, ls)?;
        }
        Ok((x, log_det))
    }

    /// Records `z = f⁻¹(x)` and `log|det ∂f⁻¹/∂x|`.
    pub fn record_inverse<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<(Var, Var)> {
        let mut z = x;
        let mut log_det = tape.constant(&[0.0]);
        for layer in self.layers.iter().rev() {
            let (s, t) = self.record_conditioner(tape, layer, z)?;
            let shifted = tape.sub(z, t)?;
            let ns = tape.neg(s);
            let ens = tape.exp(ns);
            z = tape.mul(shifted, ens)?;
            let ls = tape.sum(ns);
            log_det = tape.add(log_det, ls)?;
        }
        Ok((z, log_det))
    }

    /// Records `log q(x) = log N(f⁻¹(x); 0, I) + log|det ∂f⁻¹/∂x|`.
    pub fn record_log_density<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let (z, log_det) = self.record_inverse(tape, x)?;
        let sq = tape.square(z);
        let ss = tape.sum(sq);
        let coef = tape.constant(&[-0.5]);
        let offset = tape.constant(&[-0.5 * self.config.dim as f64 * (2.0 * PI).ln()]);
        let quad = tape.mul(ss, coef)?;
        let base = tape.add(quad, offset)?;
        tape.add(base, log_det)
    }

    fn check_input(&self, x: &[f64], what: &str) -> Result<()> {
        check_dim(self.config.dim, x.len())?;
        check_finite(x, what)
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(z, "flow forward input")?;
        let mut tape = Tape::<f64>::new(self.params.values());
        let zv = tape.input(0, z);
        let (x, ld) = self.record_forward(&mut tape, zv)?;
        Ok((tape.value(x).to_vec(), tape.scalar(ld)))
    }

    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(x, "flow inverse input")?;
        let mut tape = Tape::<f64>::new(self.params.values());
        let xv = tape.input(0, x);
        let (z, ld) = self.record_inverse(&mut tape, xv)?;
        Ok((tape.value(z).to_vec(), tape.scalar(ld)))
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x, "flow density input")?;
        let mut tape = Tape::<f64>::new(self.params.values());
        let xv = tape.input(0, x);
        let out = self.record_log_density(&mut tape, xv)?;
        Ok(tape.scalar(out))
    }

    /// `∇ₓ log q(x)` by reverse mode through the inverse map.
    pub fn model_score(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_density_and_score(x)?.1)
    }

    pub fn log_density_and_score(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x, "flow score input")?;
        let mut tape = Tape::<f64>::new(self.params.values());
        let xv = tape.input(0, x);
        let out = self.record_log_density(&mut tape, xv)?;
        let adj = tape.backward_inputs(out);
        Ok((tape.scalar(out), adj.input_gradient(self.config.dim)))
    }

    /// Pushes one base draw through the flow: `(x, log q(x))`.
    pub fn push_forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, ld) = self.forward(z)?;
        Ok((x, base_log_density(z) - ld))
    }

    /// `n` draws `x = f(z)`, `z ~ N(0, I)`, each with its exact `log q(x)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64)>> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let z = standard_normal_vec(&mut rng, self.config.dim);
                self.push_forward(&z)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> FlowCheckpoint {
        FlowCheckpoint::from_flow(self)
    }
}

/// `log N(z; 0, I)`.
pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    base_log_density(z)
}
