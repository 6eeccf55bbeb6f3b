//! Sweep the unseen-node ratio κ for all three variants and print the
//! aggregate table that `feras sweep` writes as aggregate.csv.

use feras::config::{ExperimentConfig, SweepAxis, SweepSection};
use feras::experiment::{aggregate_csv, run_sweep};

const CONFIG: &str = r#"
[dataset.synthetic]
blocks = 4
nodes_per_block = 125
p_in = 0.1
p_out = 0.005
feature_dim = 8
noise = 2.0
seed = 11

[train]
epochs = 300
n_hosts = 3
eval_every = 50
seed = 0

[train.sampler]
kind = "rw"
roots = 25
depth = 2
"#;

pub fn run() -> feras::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let sweep = SweepSection {
        seeds: 3,
        ..SweepSection::new(SweepAxis::Kappa, vec![0.0, 0.3, 0.6])
    };
    let out = std::env::temp_dir().join("feras-examples").join("kappa_sweep");
    let points = run_sweep(&cfg, &sweep, &out)?;
    print!("{}", aggregate_csv(sweep.axis, &points));
    println!("per-run metrics under {}", out.join("runs").display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
