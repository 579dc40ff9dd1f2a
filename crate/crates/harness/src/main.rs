use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowscore_harness::commands::{self, Overrides, ScatterSource};
use flowscore_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "flowscore", version, about = "Train and evaluate score-regularised normalizing flows")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of replicate seeds.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// mog4, mog8 or phi4.
    #[arg(long, global = true)]
    target: Option<String>,
    /// FKL, RKL, SM or ScoreNF.
    #[arg(long, global = true)]
    objective: Option<String>,
    #[arg(long, global = true)]
    ensemble_size: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Desk-scale overrides (4×4 lattice, shorter training).
    #[arg(long, global = true)]
    scaled: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            seeds: self.seeds,
            out: self.out.clone(),
            target: self.target.clone(),
            objective: self.objective.clone(),
            ensemble_size: self.ensemble_size,
            workers: self.workers,
            scaled: self.scaled,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw target samples into a dataset file (`--out` is the file path).
    Generate {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train one flow per seed and write checkpoints plus a manifest.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Re-evaluate the checkpoints of a manifest.
    Evaluate {
        manifest: PathBuf,
        /// Evaluation sample count and IMH chain length.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Write 2-d points from a trained flow or a dataset as CSV and SVG.
    Scatter {
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate one of the benchmark tables (1-4).
    Reproduce {
        table: u8,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { n, common } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| HarnessError::Config("generate needs --out FILE".into()))?;
            let ov = Overrides { out: None, ..common.overrides() };
            let cfg = commands::load_config(common.config.as_deref(), &ov)?;
            let f = commands::cmd_generate(&cfg, n, cfg.run.master_seed, &out)?;
            println!("wrote {} samples of dimension {} to {}", f.samples.len(), f.dim, out.display());
        }
        Cmd::Train { common } => {
            let cfg = commands::load_config(common.config.as_deref(), &common.overrides())?;
            let m = commands::cmd_train(&cfg)?;
            print_rows(&m.rows);
            println!("manifest: {}", cfg.run.out.join("manifest.json").display());
        }
        Cmd::Evaluate { manifest, n } => {
            print_rows(&commands::cmd_evaluate(&manifest, n)?);
        }
        Cmd::Scatter { manifest, dataset, n, out } => {
            let src = match (&manifest, &dataset) {
                (Some(m), _) => ScatterSource::Manifest(m),
                (None, Some(d)) => ScatterSource::Dataset(d),
                (None, None) => unreachable!("clap requires one source"),
            };
            let pts = commands::cmd_scatter(src, n, &out)?;
            println!("wrote {} points to {}", pts.len(), out.display());
        }
        Cmd::Reproduce { table, common } => {
            let ov = Overrides { scaled: false, ..common.overrides() };
            let cfg = commands::load_config(common.config.as_deref(), &ov)?;
            let r = commands::cmd_reproduce(table, &cfg, common.scaled)?;
            print!("{}", std::fs::read_to_string(&r.table_csv)?);
        }
    }
    Ok(())
}

fn print_rows(rows: &[flowscore_harness::pipeline::MetricRow]) {
    println!("seed_index,nll,rnll,ess,ar,covered_modes,diagnosis");
    for r in rows {
        println!(
            "{},{:.4},{:.4},{:.2},{:.2},{},{}",
            r.seed_index,
            r.nll,
            r.rnll,
            r.ess,
            r.ar,
            r.covered_modes.map_or(String::new(), |c| c.to_string()),
            r.diagnosis.as_deref().unwrap_or("")
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
