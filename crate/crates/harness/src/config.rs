//! Experiment configuration: one TOML table per module, every key optional.

use std::path::{Path, PathBuf};

use flowscore::flow::{FlowConfig, MaskKind};
use flowscore::sampling::HmcConfig;
use flowscore::training::{AdamConfig, LambdaSchedule, Objective, ObjectiveKind, TrainConfig};
use flowscore::{MixtureOfGaussians, Phi4Lattice, TargetDensity};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Mog4,
    Mog8,
    Phi4,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mog4 => "mog4",
            Self::Mog8 => "mog8",
            Self::Phi4 => "phi4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "mog4" => Ok(Self::Mog4),
            "mog8" => Ok(Self::Mog8),
            "phi4" => Ok(Self::Phi4),
            _ => Err(HarnessError::Config(format!(
                "unknown target `{s}`; valid values: mog4, mog8, phi4"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub kind: TargetKind,
    /// Mode offset (MOG-4) or circle radius (MOG-8).
    pub a: f64,
    pub sigma: f64,
    /// Lattice side for φ⁴.
    pub side: usize,
    pub kappa4: f64,
    pub kappa2: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            kind: TargetKind::Mog4,
            a: 4.0,
            sigma: 0.5,
            side: 8,
            kappa4: 4.0,
            kappa2: -4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub layers: usize,
    pub hidden: usize,
    pub s_max: f64,
    /// Standard deviation of the random perturbation applied to the
    /// zero-initialised output heads; 0 keeps the identity start.
    pub init_jitter: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            layers: 6,
            hidden: 64,
            s_max: 3.0,
            init_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub objective: ObjectiveKind,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_initial: f64,
    pub lambda_final: f64,
    pub lambda_fraction: f64,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub val_every: usize,
    pub val_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LambdaSchedule::default();
        Self {
            objective: ObjectiveKind::ScoreNf,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            lambda_initial: l.initial,
            lambda_final: l.final_value,
            lambda_fraction: l.fraction,
            grad_clip: 0.0,
            val_every: t.val_every,
            val_samples: t.val_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub ensemble_size: usize,
    pub test_size: usize,
    pub hmc_step_size: f64,
    pub hmc_leapfrog_steps: usize,
    pub hmc_burn_in: usize,
    pub hmc_thinning: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let h = HmcConfig::default();
        Self {
            ensemble_size: 1000,
            test_size: 5000,
            hmc_step_size: h.step_size,
            hmc_leapfrog_steps: h.leapfrog_steps,
            hmc_burn_in: h.burn_in,
            hmc_thinning: h.thinning,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Flow samples for RNLL / ESS / occupancy and IMH chain length.
    pub n: usize,
    /// Exact draws used for the MOG oracle entropy.
    pub oracle_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n: 5000,
            oracle_samples: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub master_seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            seeds: 3,
            out: PathBuf::from("runs"),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSection,
    pub flow: FlowSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub run: RunSection,
}

/// Concrete target built from a [`TargetSection`].
#[derive(Clone, Debug)]
pub enum Target {
    Mog(MixtureOfGaussians),
    Phi4(Phi4Lattice),
}

impl Target {
    pub fn density(&self) -> &dyn TargetDensity {
        match self {
            Self::Mog(m) => m,
            Self::Phi4(p) => p,
        }
    }

    pub fn mog(&self) -> Option<&MixtureOfGaussians> {
        match self {
            Self::Mog(m) => Some(m),
            Self::Phi4(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.density().dim()
    }
}

impl TargetSection {
    pub fn build(&self) -> Result<Target> {
        Ok(match self.kind {
            TargetKind::Mog4 => Target::Mog(MixtureOfGaussians::mog4(self.a, self.sigma)?),
            TargetKind::Mog8 => Target::Mog(MixtureOfGaussians::mog8(self.a, self.sigma)?),
            TargetKind::Phi4 => Target::Phi4(Phi4Lattice::new(self.side, self.kappa4, self.kappa2)?),
        })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            TargetKind::Phi4 => self.side * self.side,
            _ => 2,
        }
    }

    /// One-line description used in dataset headers.
    pub fn describe(&self) -> String {
        match self.kind {
            TargetKind::Phi4 => format!(
                "phi4(side={},kappa4={},kappa2={})",
                self.side, self.kappa4, self.kappa2
            ),
            k => format!("{}(a={},sigma={})", k.name(), self.a, self.sigma),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(HarnessError::Config(format!("{field}: {msg}")));
        let t = &self.target;
        match t.kind {
            TargetKind::Phi4 if t.side < 2 => return bad("target.side", "must be at least 2"),
            TargetKind::Mog4 | TargetKind::Mog8 if !(t.sigma > 0.0) => {
                return bad("target.sigma", "must be positive")
            }
            _ => {}
        }
        if self.data.ensemble_size == 0 {
            return bad("data.ensemble_size", "must be positive");
        }
        if self.data.test_size == 0 {
            return bad("data.test_size", "must be positive");
        }
        if self.eval.n == 0 {
            return bad("eval.n", "must be positive");
        }
        if self.eval.oracle_samples == 0 {
            return bad("eval.oracle_samples", "must be positive");
        }
        if self.run.seeds == 0 {
            return bad("run.seeds", "must be positive");
        }
        if self.train.grad_clip < 0.0 {
            return bad("train.grad_clip", "must be non-negative");
        }
        if self.flow.init_jitter < 0.0 {
            return bad("flow.init_jitter", "must be non-negative");
        }
        self.flow_config().validate()?;
        self.train_config(0).validate()?;
        self.objective().schedule.validate()?;
        self.hmc_config(0).validate()?;
        if self.train.objective.needs_samples() && self.data.ensemble_size < self.train.batch_size {
            return bad(
                "data.ensemble_size",
                &format!("smaller than train.batch_size = {}", self.train.batch_size),
            );
        }
        Ok(())
    }

    pub fn flow_config(&self) -> FlowConfig {
        let mask = match self.target.kind {
            TargetKind::Phi4 => MaskKind::Checkerboard { side: self.target.side },
            _ => MaskKind::Halves,
        };
        FlowConfig {
            dim: self.target.dim(),
            layers: self.flow.layers,
            hidden: self.flow.hidden,
            s_max: self.flow.s_max,
            mask,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            steps: t.steps,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            seed,
            val_every: t.val_every,
            val_samples: t.val_samples,
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            kind: self.train.objective,
            schedule: LambdaSchedule {
                initial: self.train.lambda_initial,
                final_value: self.train.lambda_final,
                fraction: self.train.lambda_fraction,
            },
        }
    }

    pub fn hmc_config(&self, seed: u64) -> HmcConfig {
        HmcConfig {
            step_size: self.data.hmc_step_size,
            leapfrog_steps: self.data.hmc_leapfrog_steps,
            burn_in: self.data.hmc_burn_in,
            thinning: self.data.hmc_thinning,
            seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical TOML rendering, leaving out the output
    /// directory and worker count since neither changes any result.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = RunSection::default().out;
        c.run.workers = 1;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Desk-scale overrides: a 4×4 lattice, at most 500 training steps,
    /// and smaller evaluation sets.
    pub fn scaled(mut self) -> Self {
        if self.target.kind == TargetKind::Phi4 {
            self.target.side = 4;
        }
        self.train.steps = self.train.steps.min(500);
        self.eval.n = self.eval.n.min(1000);
        self.eval.oracle_samples = self.eval.oracle_samples.min(10_000);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_experiment() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.target.kind, TargetKind::Mog4);
        assert_eq!(c.train.objective, ObjectiveKind::ScoreNf);
        assert_eq!(c.data.ensemble_size, 1000);
        assert_eq!(c.run.seeds, 3);
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = ExperimentConfig::parse(
            "[target]\nkind = \"phi4\"\nside = 4\n\n[train]\nobjective = \"FKL\"\nsteps = 10\n",
        )
        .unwrap();
        assert_eq!(c.target.kind, TargetKind::Phi4);
        assert_eq!(c.flow_config().dim, 16);
        assert_eq!(c.train.objective, ObjectiveKind::Fkl);

        let err = ExperimentConfig::parse("[train]\nstepz = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stepz") && msg.contains("line 2"), "{msg}");
        let err = ExperimentConfig::parse("[train]\nobjective = \"GAN\"\n").unwrap_err();
        assert!(err.to_string().contains("ScoreNF"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let err = ExperimentConfig::parse("[data]\nensemble_size = 0\n").unwrap_err();
        assert!(err.to_string().contains("data.ensemble_size"));
        let err = ExperimentConfig::parse("[data]\nensemble_size = 64\n").unwrap_err();
        assert!(err.to_string().contains("batch_size"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.run.out = "elsewhere".into();
        b.run.workers = 8;
        assert_eq!(a.hash(), b.hash());
        b.train.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
