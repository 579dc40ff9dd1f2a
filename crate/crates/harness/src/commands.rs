//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use flowscore::rng::derive_seed;
use flowscore::training::{Dataset, ObjectiveKind};
use flowscore::FlowCheckpoint;

use crate::config::{ExperimentConfig, TargetKind};
use crate::data::DatasetFile;
use crate::error::{HarnessError, Result};
use crate::pipeline::{self, checkpoint_path, history_path, MetricRow};
use crate::report::{self, RunManifest, SeedEntry, MANIFEST_FORMAT};

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub out: Option<PathBuf>,
    pub target: Option<String>,
    pub objective: Option<String>,
    pub ensemble_size: Option<usize>,
    pub workers: Option<usize>,
    pub scaled: bool,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(s) = self.seed {
            cfg.run.master_seed = s;
        }
        if let Some(n) = self.seeds {
            cfg.run.seeds = n;
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        if let Some(t) = &self.target {
            cfg.target.kind = TargetKind::parse(t)?;
        }
        if let Some(o) = &self.objective {
            cfg.train.objective = o
                .parse::<ObjectiveKind>()
                .map_err(|e| HarnessError::Config(format!("--objective: {e}")))?;
        }
        if let Some(n) = self.ensemble_size {
            cfg.data.ensemble_size = n;
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if self.scaled {
            cfg = cfg.scaled();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig> {
    let base = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    ov.apply(base)
}

/// Writes `n` target samples to `out_path`.
pub fn cmd_generate(cfg: &ExperimentConfig, n: usize, seed: u64, out_path: &Path) -> Result<DatasetFile> {
    let f = crate::data::generate(cfg, n, seed)?;
    f.write(out_path)?;
    Ok(f)
}

/// Trains every seed, writes checkpoints, histories, metrics and the
/// manifest into `cfg.run.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let out = cfg.run.out.clone();
    let data_dir = out.join("data");
    let cell = pipeline::run_cell(cfg, Some(&data_dir))?;
    let ens = pipeline::ensemble(cfg, Some(&data_dir))?;

    let mut seeds = Vec::new();
    for r in &cell.replicates {
        let ck = checkpoint_path(&out, r.seed_index);
        let hist = history_path(&out, r.seed_index);
        report::write_text(&ck, &serde_json::to_string(&r.flow.to_checkpoint())?)?;
        report::write_text(&hist, &report::history_csv(cfg, r.seed, &r.history)?)?;
        seeds.push(SeedEntry {
            seed_index: r.seed_index,
            seed: r.seed,
            checkpoint: relative(&ck, &out),
            history: relative(&hist, &out),
        });
    }
    let rows = cell.rows();
    write_metrics(cfg, &out, &rows)?;
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: crate::VERSION.into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        train_dataset: relative(&dataset_path(&data_dir, cfg, "train", &ens.train_file), &out),
        test_dataset: relative(&dataset_path(&data_dir, cfg, "test", &ens.test_file), &out),
        oracle_nll: cell.oracle_nll,
        seeds,
        rows,
    };
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}

fn dataset_path(dir: &Path, cfg: &ExperimentConfig, role: &str, f: &DatasetFile) -> PathBuf {
    let seed = f.meta["seed"].parse::<u64>().unwrap_or_default();
    dir.join(pipeline::cache_name(cfg, role, f.samples.len(), seed))
}

fn relative(p: &Path, base: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

fn write_metrics(cfg: &ExperimentConfig, out: &Path, rows: &[MetricRow]) -> Result<()> {
    report::write_text(&out.join("metrics.csv"), &report::metrics_csv(cfg, rows, &[])?)?;
    report::write_text(&out.join("aggregate.csv"), &report::aggregate_csv(cfg, rows, &[])?)
}

fn load_checkpoint(path: &Path) -> Result<flowscore::FlowModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| HarnessError::MissingCheckpoint(path.display().to_string()))?;
    let ck: FlowCheckpoint = serde_json::from_str(&text)?;
    Ok(ck.into_flow()?)
}

/// Re-evaluates every checkpoint listed in the manifest at `manifest_path`
/// and rewrites the metric CSVs next to it. `eval_n` overrides the
/// manifest's evaluation sample count.
pub fn cmd_evaluate(manifest_path: &Path, eval_n: Option<usize>) -> Result<Vec<MetricRow>> {
    let m = RunManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cfg = m.config.clone();
    if let Some(n) = eval_n {
        cfg.eval.n = n;
    }
    cfg.validate()?;
    let target = cfg.target.build()?;
    let test = Dataset::new(DatasetFile::read(&base.join(&m.test_dataset))?.samples)?;
    let mut rows = Vec::with_capacity(m.seeds.len());
    for s in &m.seeds {
        let flow = load_checkpoint(&base.join(&s.checkpoint))?;
        let row = pipeline::evaluate_flow(&cfg, &target, &flow, &test, s.seed_index, s.seed, m.oracle_nll)
            .map_err(|e| e.with_seed(s.seed))?;
        rows.push(row);
    }
    write_metrics(&cfg, base, &rows)?;
    Ok(rows)
}

pub enum ScatterSource<'a> {
    Manifest(&'a Path),
    Dataset(&'a Path),
}

/// Writes `n` two-dimensional points as CSV plus an SVG next to it. Flow
/// points come from the first replicate of a manifest.
pub fn cmd_scatter(source: ScatterSource<'_>, n: usize, out_path: &Path) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(HarnessError::Config("n: must be positive".into()));
    }
    let (cfg, points, label) = match source {
        ScatterSource::Manifest(p) => {
            let m = RunManifest::read(p)?;
            let base = p.parent().unwrap_or(Path::new("."));
            let first = m
                .seeds
                .first()
                .ok_or_else(|| HarnessError::MissingCheckpoint("manifest lists no seeds".into()))?;
            let flow = load_checkpoint(&base.join(&first.checkpoint))?;
            if flow.dim() != 2 {
                return Err(HarnessError::UnsupportedDimension(flow.dim()));
            }
            let pts = flow
                .sample(n, derive_seed(first.seed, "scatter", 0))?
                .into_iter()
                .map(|(x, _)| x)
                .collect::<Vec<_>>();
            (m.config, pts, format!("source=flow seed={}", first.seed))
        }
        ScatterSource::Dataset(p) => {
            let f = DatasetFile::read(p)?;
            if f.dim != 2 {
                return Err(HarnessError::UnsupportedDimension(f.dim));
            }
            let pts: Vec<Vec<f64>> = f.samples.into_iter().take(n).collect();
            (ExperimentConfig::default(), pts, format!("source=dataset {}", p.display()))
        }
    };
    report::write_text(out_path, &report::scatter_csv(&cfg, &points, &[label]))?;
    report::write_text(&out_path.with_extension("svg"), &report::scatter_svg(&points))?;
    Ok(points)
}

/// Configurations for every cell of table `id`, built from `base`.
pub fn table_cells(id: u8, base: &ExperimentConfig, scaled: bool) -> Result<Vec<ExperimentConfig>> {
    let cell = |target: TargetKind, obj: ObjectiveKind, n: usize| {
        let mut c = base.clone();
        c.target.kind = target;
        c.train.objective = obj;
        c.data.ensemble_size = n;
        if scaled {
            c = c.scaled();
        }
        c
    };
    let mut cells = Vec::new();
    match id {
        1 => {
            for t in [TargetKind::Mog4, TargetKind::Mog8] {
                for o in ObjectiveKind::ALL {
                    cells.push(cell(t, o, 1000));
                }
            }
        }
        2 => {
            for o in ObjectiveKind::ALL {
                cells.push(cell(TargetKind::Phi4, o, 10_000));
            }
        }
        3 | 4 => {
            let t = if id == 3 { TargetKind::Mog4 } else { TargetKind::Phi4 };
            for o in [ObjectiveKind::Fkl, ObjectiveKind::ScoreNf] {
                for n in [10_000, 1000, 250] {
                    cells.push(cell(t, o, n));
                }
            }
        }
        _ => {
            return Err(HarnessError::Config(format!(
                "unknown table {id}; valid values: 1, 2, 3, 4"
            )))
        }
    }
    for c in &cells {
        c.validate()?;
    }
    Ok(cells)
}

pub struct ReproduceOutput {
    pub table_csv: PathBuf,
    pub runs_csv: PathBuf,
    pub rows: Vec<MetricRow>,
}

/// Runs every cell of table `id` and writes `table{id}.csv` (mean ±
/// stderr, two decimals) and `table{id}_runs.csv` (raw rows) into
/// `base.run.out`. Rows land in `table{id}_partial.csv` as replicates
/// finish; that file is removed once the table is complete.
pub fn cmd_reproduce(id: u8, base: &ExperimentConfig, scaled: bool) -> Result<ReproduceOutput> {
    let cells = table_cells(id, base, scaled)?;
    let out = base.run.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::Io(format!("{}: {e}", out.display())))?;
    let mut extra = vec![format!("table={id}")];
    if scaled {
        extra.push("scaled (desk-scale overrides)".into());
    }
    let header_cfg = if scaled { base.clone().scaled() } else { base.clone() };

    let partial = out.join(format!("table{id}_partial.csv"));
    let sink = Mutex::new(std::fs::File::create(&partial)?);
    let on_done = |r: &MetricRow| {
        use std::io::Write;
        let mut f = sink.lock().expect("sink lock");
        let _ = writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.target.name(),
            r.objective,
            r.ensemble_size,
            r.seed_index,
            r.nll,
            r.rnll,
            r.ess,
            r.ar
        );
        let _ = f.flush();
    };
    let results = pipeline::run_cells(&cells, base.run.workers, Some(&out.join("data")), &on_done)?;
    let rows: Vec<MetricRow> = results.iter().flat_map(|c| c.rows()).collect();

    let table_csv = out.join(format!("table{id}.csv"));
    let runs_csv = out.join(format!("table{id}_runs.csv"));
    report::write_text(&table_csv, &report::aggregate_csv(&header_cfg, &rows, &extra)?)?;
    report::write_text(&runs_csv, &report::metrics_csv(&header_cfg, &rows, &extra)?)?;
    drop(sink);
    let _ = std::fs::remove_file(&partial);
    Ok(ReproduceOutput {
        table_csv,
        runs_csv,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.flow.layers = 2;
        c.flow.hidden = 8;
        c.train.steps = 5;
        c.train.batch_size = 16;
        c.train.val_every = 0;
        c.data.ensemble_size = 250;
        c.data.test_size = 100;
        c.eval.n = 50;
        c.eval.oracle_samples = 1000;
        c.run.seeds = 2;
        c.run.out = out.to_path_buf();
        c
    }

    #[test]
    fn table_shapes() {
        let c = ExperimentConfig::default();
        assert_eq!(table_cells(1, &c, false).unwrap().len(), 8);
        assert_eq!(table_cells(2, &c, false).unwrap().len(), 4);
        let t3 = table_cells(3, &c, false).unwrap();
        assert_eq!(t3.len(), 6);
        assert!(t3.iter().all(|c| c.target.kind == TargetKind::Mog4));
        let t4 = table_cells(4, &c, true).unwrap();
        assert!(t4.iter().all(|c| c.target.side == 4));
        assert!(table_cells(5, &c, false).is_err());
    }

    #[test]
    fn generate_is_deterministic_and_rejects_zero() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::default();
        let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
        cmd_generate(&c, 10_000, 9, &a).unwrap();
        cmd_generate(&c, 10_000, 9, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let f = DatasetFile::read(&a).unwrap();
        assert_eq!((f.dim, f.samples.len()), (2, 10_000));
        let z = dir.path().join("zero.txt");
        assert!(matches!(cmd_generate(&c, 0, 9, &z), Err(HarnessError::Config(_))));
        assert!(!z.exists());
    }

    #[test]
    fn train_then_evaluate_reproduces_rows() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let m = cmd_train(&c).unwrap();
        assert_eq!(m.seeds.len(), 2);
        for s in &m.seeds {
            assert!(dir.path().join(&s.checkpoint).exists());
            assert!(dir.path().join(&s.history).exists());
        }
        let rows = cmd_evaluate(&dir.path().join("manifest.json"), None).unwrap();
        assert_eq!(rows, m.rows);
        let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        assert!(agg.lines().any(|l| l.starts_with("mog4,ScoreNF,250,2,")));

        std::fs::remove_file(dir.path().join(&m.seeds[1].checkpoint)).unwrap();
        let err = cmd_evaluate(&dir.path().join("manifest.json"), None).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn scatter_needs_two_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::default();
        let mog = dir.path().join("mog.txt");
        cmd_generate(&c, 100, 1, &mog).unwrap();
        let out = dir.path().join("s.csv");
        assert_eq!(cmd_scatter(ScatterSource::Dataset(&mog), 40, &out).unwrap().len(), 40);
        assert!(out.with_extension("svg").exists());

        c.target.kind = TargetKind::Phi4;
        c.target.side = 2;
        let phi = dir.path().join("phi.txt");
        cmd_generate(&c, 10, 1, &phi).unwrap();
        let err = cmd_scatter(ScatterSource::Dataset(&phi), 10, &out).unwrap_err();
        assert!(matches!(err, HarnessError::UnsupportedDimension(4)));
        assert_eq!(err.exit_code(), 2);
    }
}
