//! Train / evaluate jobs shared by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flowscore::metrics::{self, covered_modes, diagnose, Diagnosis, DiagnosisThresholds, MetricsReport};
use flowscore::rng::derive_seed;
use flowscore::training::{train, Dataset, HistoryRow, ObjectiveKind};
use flowscore::FlowModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Target, TargetKind};
use crate::data::{self, DatasetFile};
use crate::error::{HarnessError, Result};

/// Seed of the `index`-th replicate under `master`.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, "replicate", index as u64)
}

/// Training and test ensembles for one target. Training sets of different
/// sizes drawn under the same master seed are prefixes of one another.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub train_file: DatasetFile,
    pub test_file: DatasetFile,
}

fn data_seed(master: u64, role: &str, cfg: &ExperimentConfig) -> u64 {
    derive_seed(master, &format!("{role}/{}", cfg.target.describe()), 0)
}

/// Dataset file at `path` if it exists and matches what would be generated,
/// otherwise a fresh one (written to `path` when given).
fn load_or_draw(cfg: &ExperimentConfig, n: usize, seed: u64, path: Option<&Path>) -> Result<DatasetFile> {
    if let Some(p) = path.filter(|p| p.exists()) {
        if let Ok(f) = DatasetFile::read(p) {
            let fits = f.samples.len() == n
                && f.meta.get("seed") == Some(&seed.to_string())
                && f.meta.get("target") == Some(&cfg.target.describe());
            if fits {
                return Ok(f);
            }
        }
    }
    let f = data::generate(cfg, n, seed)?;
    if let Some(p) = path {
        f.write(p)?;
    }
    Ok(f)
}

pub fn cache_name(cfg: &ExperimentConfig, role: &str, n: usize, seed: u64) -> String {
    format!("{}-{role}-n{n}-{seed:016x}.txt", cfg.target.kind.name())
}

/// Builds (or reloads from `cache_dir`) the ensembles for `cfg`.
pub fn ensemble(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Ensemble> {
    let master = cfg.run.master_seed;
    let name = |role: &str, n: usize, seed: u64| cache_dir.map(|d| d.join(cache_name(cfg, role, n, seed)));
    let (n_tr, n_te) = (cfg.data.ensemble_size, cfg.data.test_size);
    let (s_tr, s_te) = (data_seed(master, "train", cfg), data_seed(master, "test", cfg));
    let train_file = load_or_draw(cfg, n_tr, s_tr, name("train", n_tr, s_tr).as_deref())?;
    let test_file = load_or_draw(cfg, n_te, s_te, name("test", n_te, s_te).as_deref())?;
    Ok(Ensemble {
        train: Arc::new(Dataset::new(train_file.samples.clone())?),
        test: Arc::new(Dataset::new(test_file.samples.clone())?),
        train_file,
        test_file,
    })
}

/// `-E_p[log p]` from exact draws, for targets with a known density.
pub fn oracle_nll(cfg: &ExperimentConfig, target: &Target) -> Option<f64> {
    target.mog().map(|m| {
        m.entropy_estimate(
            cfg.eval.oracle_samples,
            derive_seed(cfg.run.master_seed, "oracle", 0),
        )
    })
}

/// Full-precision metrics of one trained replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub target: TargetKind,
    pub objective: ObjectiveKind,
    pub ensemble_size: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub nll: f64,
    pub rnll: f64,
    pub ess: f64,
    pub ar: f64,
    pub covered_modes: Option<usize>,
    pub min_occupancy: Option<f64>,
    pub oracle_nll: Option<f64>,
    pub diagnosis: Option<String>,
}

impl MetricRow {
    pub fn key(&self) -> (TargetKind, ObjectiveKind, std::cmp::Reverse<usize>, usize) {
        (self.target, self.objective, std::cmp::Reverse(self.ensemble_size), self.seed_index)
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            nll: self.nll,
            rnll: self.rnll,
            ess: self.ess,
            ar: self.ar,
            mode_occupancy: None,
        }
    }
}

pub fn metric_row(
    cfg: &ExperimentConfig,
    target: &Target,
    seed_index: usize,
    seed: u64,
    report: &MetricsReport,
    oracle: Option<f64>,
) -> MetricRow {
    let occ = report.mode_occupancy.as_deref();
    MetricRow {
        target: cfg.target.kind,
        objective: cfg.train.objective,
        ensemble_size: cfg.data.ensemble_size,
        seed_index,
        seed,
        nll: report.nll,
        rnll: report.rnll,
        ess: report.ess,
        ar: report.ar,
        covered_modes: target.mog().zip(occ).map(|(m, o)| covered_modes(m, o)),
        min_occupancy: occ.map(|o| o.iter().copied().fold(f64::INFINITY, f64::min)),
        oracle_nll: oracle,
        diagnosis: oracle.map(|o| {
            diagnose(report.nll, report.rnll, o, &DiagnosisThresholds::default())
                .label()
                .to_string()
        }),
    }
}

pub fn diagnosis_of(row: &MetricRow) -> Option<Diagnosis> {
    row.oracle_nll
        .map(|o| diagnose(row.nll, row.rnll, o, &DiagnosisThresholds::default()))
}

/// One trained replicate.
#[derive(Clone, Debug)]
pub struct Replicate {
    pub seed_index: usize,
    pub seed: u64,
    pub flow: FlowModel,
    pub history: Vec<HistoryRow>,
    pub row: MetricRow,
}

pub fn initial_flow(cfg: &ExperimentConfig, seed: u64) -> Result<FlowModel> {
    let mut flow = FlowModel::new(cfg.flow_config(), derive_seed(seed, "init", 0))?;
    if cfg.flow.init_jitter > 0.0 {
        flow.jitter(cfg.flow.init_jitter, derive_seed(seed, "jitter", 0));
    }
    Ok(flow)
}

pub fn evaluate_flow(
    cfg: &ExperimentConfig,
    target: &Target,
    flow: &FlowModel,
    test: &Dataset,
    seed_index: usize,
    seed: u64,
    oracle: Option<f64>,
) -> Result<MetricRow> {
    let report = metrics::evaluate(
        flow,
        target.density(),
        target.mog(),
        test.samples(),
        cfg.eval.n,
        derive_seed(seed, "eval", 0),
    )?;
    Ok(metric_row(cfg, target, seed_index, seed, &report, oracle))
}

/// Trains and evaluates replicate `seed_index`. The checkpoint is the
/// flow after the last step; validation NLL is recorded for monitoring.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    target: &Target,
    ens: &Ensemble,
    seed_index: usize,
    oracle: Option<f64>,
) -> Result<Replicate> {
    let seed = replicate_seed(cfg.run.master_seed, seed_index);
    let inner = || -> Result<Replicate> {
        let flow = initial_flow(cfg, seed)?;
        let out = train(
            &flow,
            target.density(),
            Some(&ens.train),
            Some(&ens.test),
            &cfg.objective(),
            &cfg.train_config(derive_seed(seed, "train", 0)),
        )?;
        let row = evaluate_flow(cfg, target, &out.flow, &ens.test, seed_index, seed, oracle)?;
        Ok(Replicate {
            seed_index,
            seed,
            flow: out.flow,
            history: out.history,
            row,
        })
    };
    inner().map_err(|e| e.with_seed(seed))
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("run.workers: {e}")))
}

/// Result of training every seed of one configuration.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub oracle_nll: Option<f64>,
    pub replicates: Vec<Replicate>,
}

impl CellResult {
    pub fn rows(&self) -> Vec<MetricRow> {
        self.replicates.iter().map(|r| r.row.clone()).collect()
    }

    pub fn mean(&self, f: impl Fn(&MetricRow) -> f64) -> f64 {
        let n = self.replicates.len() as f64;
        self.replicates.iter().map(|r| f(&r.row)).sum::<f64>() / n
    }
}

/// Trains `cfg.run.seeds` replicates of several configurations on a shared
/// worker pool. Ensembles and oracles are prepared up front, one per
/// distinct target/ensemble-size pair. `on_done` sees each finished
/// replicate as it completes, in completion order.
pub fn run_cells(
    cells: &[ExperimentConfig],
    workers: usize,
    cache_dir: Option<&Path>,
    on_done: &(dyn Fn(&MetricRow) + Sync),
) -> Result<Vec<CellResult>> {
    let mut ensembles: BTreeMap<String, Ensemble> = BTreeMap::new();
    let mut oracles: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut targets = Vec::with_capacity(cells.len());
    for c in cells {
        c.validate()?;
        let target = c.target.build()?;
        let key = format!(
            "{}|{}|{}|{}",
            c.target.describe(),
            c.data.ensemble_size,
            c.data.test_size,
            c.run.master_seed
        );
        if !ensembles.contains_key(&key) {
            ensembles.insert(key.clone(), ensemble(c, cache_dir)?);
        }
        let okey = format!("{}|{}|{}", c.target.describe(), c.eval.oracle_samples, c.run.master_seed);
        if !oracles.contains_key(&okey) {
            oracles.insert(okey.clone(), oracle_nll(c, &target));
        }
        targets.push((target, key, okey));
    }

    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.run.seeds).map(move |s| (ci, s)))
        .collect();
    let pool = thread_pool(workers)?;
    let done: Vec<Result<Replicate>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, s)| {
                let (target, key, okey) = &targets[ci];
                let r = run_replicate(&cells[ci], target, &ensembles[key], s, oracles[okey]);
                if let Ok(rep) = &r {
                    on_done(&rep.row);
                }
                r
            })
            .collect()
    });

    let mut out: Vec<CellResult> = cells
        .iter()
        .zip(&targets)
        .map(|(c, (_, _, okey))| CellResult {
            config: c.clone(),
            oracle_nll: oracles[okey],
            replicates: Vec::new(),
        })
        .collect();
    for (&(ci, _), r) in jobs.iter().zip(done) {
        out[ci].replicates.push(r?);
    }
    Ok(out)
}

/// Convenience wrapper for a single configuration.
pub fn run_cell(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<CellResult> {
    Ok(run_cells(std::slice::from_ref(cfg), cfg.run.workers, cache_dir, &|_| {})?
        .pop()
        .expect("one cell"))
}

pub fn checkpoint_path(out: &Path, seed_index: usize) -> PathBuf {
    out.join(format!("seed{seed_index}")).join("checkpoint.json")
}

pub fn history_path(out: &Path, seed_index: usize) -> PathBuf {
    out.join(format!("seed{seed_index}")).join("history.csv")
}
