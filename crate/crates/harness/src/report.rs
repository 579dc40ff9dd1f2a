//! CSV, manifest and SVG outputs. Every text output starts with `#`
//! provenance lines naming the toolkit version, config hash and seed.

use std::path::{Path, PathBuf};

use flowscore::metrics::MeanStderr;
use flowscore::training::HistoryRow;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::MetricRow;

pub const MANIFEST_FORMAT: &str = "flowscore-run-manifest/1";

pub fn provenance(cfg: &ExperimentConfig, extra: &[String]) -> String {
    let mut s = format!(
        "# flowscore {} config_hash={} seed={}\n",
        crate::VERSION,
        cfg.hash(),
        cfg.run.master_seed
    );
    for e in extra {
        s.push_str("# ");
        s.push_str(e);
        s.push('\n');
    }
    s
}

fn csv_body<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Io(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Raw per-replicate rows, sorted by key, full precision.
pub fn metrics_csv(cfg: &ExperimentConfig, rows: &[MetricRow], extra: &[String]) -> Result<String> {
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.key());
    Ok(provenance(cfg, extra) + &csv_body(&rows)?)
}

pub fn history_csv(cfg: &ExperimentConfig, seed: u64, history: &[HistoryRow]) -> Result<String> {
    Ok(provenance(cfg, &[format!("replicate_seed={seed}")]) + &csv_body(history)?)
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Mean ± standard error of each metric for every (target, method,
/// ensemble size) group, rounded to two decimals.
pub fn aggregate_csv(cfg: &ExperimentConfig, rows: &[MetricRow], extra: &[String]) -> Result<String> {
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.key());
    let mut out = provenance(cfg, extra);
    out.push_str("target,method,ensemble_size,seeds,nll,nll_se,rnll,rnll_se,ess,ess_se,ar,ar_se\n");
    let mut i = 0;
    while i < rows.len() {
        let k = rows[i].key();
        let group: Vec<&MetricRow> = rows[i..].iter().take_while(|r| (r.key().0, r.key().1, r.key().2) == (k.0, k.1, k.2)).collect();
        i += group.len();
        let head = group[0];
        out.push_str(&format!(
            "{},{},{},{}",
            head.target.name(),
            head.objective,
            head.ensemble_size,
            group.len()
        ));
        for f in [
            |r: &MetricRow| r.nll,
            |r: &MetricRow| r.rnll,
            |r: &MetricRow| r.ess,
            |r: &MetricRow| r.ar,
        ] {
            let vals: Vec<f64> = group.iter().map(|r| f(r)).collect();
            match MeanStderr::of(&vals) {
                Ok(m) => out.push_str(&format!(",{},{}", fmt2(m.mean), fmt2(m.stderr))),
                Err(_) => out.push_str(&format!(",{},", fmt2(vals[0]))),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed_index: usize,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub wall_clock_secs: f64,
    pub train_dataset: PathBuf,
    pub test_dataset: PathBuf,
    pub oracle_nll: Option<f64>,
    pub seeds: Vec<SeedEntry>,
    pub rows: Vec<MetricRow>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(HarnessError::Io(format!("unknown manifest format `{}`", m.format)));
        }
        Ok(m)
    }
}

/// Minimal scatter plot of 2-d points.
pub fn scatter_svg(points: &[Vec<f64>]) -> String {
    let lim = points
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { m })
        * 1.05;
    let size = 480.0;
    let map = |v: f64| (v + lim) / (2.0 * lim) * size;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"0\" y1=\"{c}\" x2=\"{size}\" y2=\"{c}\" stroke=\"#ccc\"/>\n\
         <line x1=\"{c}\" y1=\"0\" x2=\"{c}\" y2=\"{size}\" stroke=\"#ccc\"/>\n",
        c = size / 2.0
    );
    for p in points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.2\" fill=\"#1f4e99\" fill-opacity=\"0.5\"/>\n",
            map(p[0]),
            size - map(p[1])
        ));
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter_csv(cfg: &ExperimentConfig, points: &[Vec<f64>], extra: &[String]) -> String {
    let mut s = provenance(cfg, extra);
    s.push_str("x1,x2\n");
    for p in points {
        s.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TargetKind;
    use flowscore::training::ObjectiveKind;

    fn row(obj: ObjectiveKind, n: usize, i: usize, nll: f64) -> MetricRow {
        MetricRow {
            target: TargetKind::Mog4,
            objective: obj,
            ensemble_size: n,
            seed_index: i,
            seed: i as u64,
            nll,
            rnll: 1.0,
            ess: 50.0,
            ar: 60.0,
            covered_modes: Some(4),
            min_occupancy: Some(0.24),
            oracle_nll: Some(2.8),
            diagnosis: Some("matched".into()),
        }
    }

    #[test]
    fn aggregate_groups_and_rounds() {
        let cfg = ExperimentConfig::default();
        let rows = vec![
            row(ObjectiveKind::ScoreNf, 1000, 2, 3.0),
            row(ObjectiveKind::Fkl, 1000, 0, 5.0),
            row(ObjectiveKind::ScoreNf, 1000, 0, 1.0),
            row(ObjectiveKind::ScoreNf, 1000, 1, 2.0),
        ];
        let text = aggregate_csv(&cfg, &rows, &[]).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body.len(), 3);
        assert_eq!(body[1], "mog4,FKL,1000,1,5.00,,1.00,,50.00,,60.00,");
        assert_eq!(body[2], "mog4,ScoreNF,1000,3,2.00,0.58,1.00,0.00,50.00,0.00,60.00,0.00");
    }

    #[test]
    fn metrics_rows_are_sorted_and_full_precision() {
        let cfg = ExperimentConfig::default();
        let rows = vec![row(ObjectiveKind::ScoreNf, 250, 0, 0.1 + 0.2), row(ObjectiveKind::ScoreNf, 1000, 0, 1.0)];
        let text = metrics_csv(&cfg, &rows, &[]).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert!(body[0].starts_with("target,objective,ensemble_size"));
        assert!(body[1].contains(",1000,"));
        assert!(body[2].contains("0.30000000000000004"));
        assert!(text.starts_with(&format!("# flowscore {} config_hash=", crate::VERSION)));
    }
}
