//! Target ensembles and their on-disk text format.
//!
//! A dataset file is one header line followed by `n` rows of `d`
//! space-separated reals printed with 17 significant digits:
//!
//! ```text
//! # flowscore-dataset d=2 n=3 target=mog4(a=4,sigma=0.5) sampler=exact seed=7 config_hash=… version=0.1.0
//! 4.1234567890123457e0 3.9876543210987654e0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use flowscore::sampling::hmc_run;

use crate::config::{ExperimentConfig, Target};
use crate::error::{HarnessError, Result};

const MAGIC: &str = "# flowscore-dataset";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub dim: usize,
    /// Remaining header fields in key order, `d` and `n` excluded.
    pub meta: BTreeMap<String, String>,
    pub samples: Vec<Vec<f64>>,
}

impl DatasetFile {
    pub fn render(&self) -> String {
        let mut s = format!("{MAGIC} d={} n={}", self.dim, self.samples.len());
        for (k, v) in &self.meta {
            write!(s, " {k}={v}").unwrap();
        }
        s.push('\n');
        for row in &self.samples {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{v:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| HarnessError::Io(format!("dataset: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| bad("missing header line".into()))?;
        let mut meta = BTreeMap::new();
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header field `{tok}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let field = |meta: &mut BTreeMap<String, String>, k: &str| -> Result<usize> {
            meta.remove(k)
                .ok_or_else(|| bad(format!("header lacks `{k}`")))?
                .parse()
                .map_err(|e| bad(format!("header `{k}`: {e}")))
        };
        let dim = field(&mut meta, "d")?;
        let n = field(&mut meta, "n")?;
        let mut samples = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            if row.len() != dim {
                return Err(bad(format!("line {}: expected {dim} values, got {}", i + 2, row.len())));
            }
            samples.push(row);
        }
        if samples.len() != n {
            return Err(bad(format!("header says n={n}, found {} rows", samples.len())));
        }
        Ok(Self { dim, meta, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render()).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Draws `n` target samples: exact draws for mixtures, an HMC chain for φ⁴.
/// Returns the samples and the sampler label.
pub fn draw(cfg: &ExperimentConfig, target: &Target, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, String)> {
    if n == 0 {
        return Err(HarnessError::Config("n: must be positive".into()));
    }
    Ok(match target {
        Target::Mog(m) => (m.sample_exact(n, seed), "exact".to_string()),
        Target::Phi4(p) => {
            let h = cfg.hmc_config(seed);
            let run = hmc_run(p, n, &h, None)?;
            let label = format!(
                "hmc(eps={},leapfrog={},burn_in={},thin={},acc={:.2})",
                h.step_size,
                h.leapfrog_steps,
                h.burn_in,
                h.thinning,
                run.acceptance_rate()
            );
            (run.samples, label)
        }
    })
}

/// Samples plus the provenance header for `cfg`.
pub fn generate(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<DatasetFile> {
    let target = cfg.target.build()?;
    let (samples, sampler) = draw(cfg, &target, n, seed)?;
    let mut meta = BTreeMap::new();
    meta.insert("target".into(), cfg.target.describe());
    meta.insert("sampler".into(), sampler);
    meta.insert("seed".into(), seed.to_string());
    meta.insert("config_hash".into(), cfg.hash());
    meta.insert("version".into(), crate::VERSION.to_string());
    Ok(DatasetFile {
        dim: target.dim(),
        meta,
        samples,
    })
}
