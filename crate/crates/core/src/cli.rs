//! Command-line front end: `generate`, `run`, `sweep` and `certify`.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or input error,
//! 3 divergence, 4 linearization too large to certify.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{DatasetSpec, ExperimentConfig, SweepAxis, SweepSection};
use crate::error::{FerasError, Result};
use crate::experiment::{certify_experiment, exit_code, run_experiment, run_sweep};
use crate::synth::write_synthetic;
use crate::trainer::Mode;

#[derive(Debug, Parser)]
#[command(name = "feras", version, about = "Federated GCN training with shared node embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `train.seed` (and the synthetic seed for `generate`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "sequential" => Ok(Mode::Sequential),
        "parallel" => Ok(Mode::Parallel),
        _ => Err(format!("expected sequential or parallel, got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset described by `[dataset.synthetic]`.
    Generate(Common),
    /// Train one variant; writes metrics.csv and summary.json.
    Run(Common),
    /// Repeat runs over one axis; writes runs.csv and aggregate.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides `sweep.axis`.
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        /// Comma-separated values; overrides `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Seeds per point; overrides `sweep.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Check the contraction conditions; writes certify.json.
    Certify(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.train.mode = mode;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    Ok((cfg, out))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = load(&common)?;
            let DatasetSpec::Synthetic(mut spec) = cfg.dataset else {
                return Err(FerasError::Config("generate needs a [dataset.synthetic] section".into()));
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let g = write_synthetic(&spec, &out)?;
            println!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), out.display());
        }
        Command::Run(common) => {
            let (cfg, out) = load(&common)?;
            let s = run_experiment(&cfg, &out)?;
            println!(
                "{}: final test F1 {} in {:.2}s; results in {}",
                s.variant,
                s.final_test_f1.map_or("n/a".into(), |f| format!("{f:.4}")),
                s.wall_time_s,
                out.display()
            );
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
        } => {
            let (cfg, out) = load(&common)?;
            let mut sweep = match (cfg.sweep.clone(), axis) {
                (Some(s), _) => s,
                (None, Some(axis)) => SweepSection::new(axis, Vec::new()),
                (None, None) => {
                    return Err(FerasError::Config("sweep needs a [sweep] section or --axis".into()));
                }
            };
            if let Some(a) = axis {
                sweep.axis = a;
            }
            if let Some(v) = values {
                sweep.values = v;
            }
            if let Some(s) = seeds {
                sweep.seeds = s;
            }
            for p in run_sweep(&cfg, &sweep, &out)? {
                println!(
                    "{}={} {}: test F1 {:.4} ± {:.4} over {} runs",
                    sweep.axis.as_str(),
                    p.value,
                    p.variant,
                    p.mean_test_f1,
                    p.ci95_test_f1,
                    p.runs
                );
            }
        }
        Command::Certify(common) => {
            let (cfg, out) = load(&common)?;
            let c = certify_experiment(&cfg, &out)?;
            for h in &c.hosts {
                println!(
                    "host {}: rho_m1 {:.4e} <= {:.4e}: {}, eta {} <= {:.4e}: {}",
                    h.host,
                    h.report.rho_m1,
                    h.report.rho_m1_bound,
                    h.report.satisfied[0],
                    h.report.eta,
                    h.report.eta_max,
                    h.report.satisfied[1]
                );
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
