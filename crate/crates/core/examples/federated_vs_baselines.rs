//! Feras against the isolated and share-weights-only baselines when 60% of
//! each host's graph is unseen. Single seeds vary a lot; compare the means.

use feras::federation::assign_visibility;
use feras::gcn::{Hyper, LossKind};
use feras::graph::Role;
use feras::sampler::SamplerConfig;
use feras::synth::{generate_synthetic, SyntheticSpec};
use feras::trainer::{final_mean, train_variant, Inference, Mode, TrainConfig, Variant};

pub fn run() -> feras::Result<()> {
    let g = generate_synthetic(&SyntheticSpec {
        blocks: 4,
        nodes_per_block: 125,
        p_in: 0.1,
        p_out: 0.005,
        feature_dim: 8,
        noise: 2.0,
        seed: 11,
    })?;
    let n_hosts = 3;
    let kappa = 0.6;
    let pi = kappa * n_hosts as f64 / (n_hosts as f64 - 1.0);

    let mut totals = [0.0; 3];
    let seeds = 5;
    for seed in 0..seeds {
        let cfg = TrainConfig {
            epochs: 300,
            n_hosts,
            q: 10,
            sampler: SamplerConfig::rw(25, 2),
            hyper: Hyper::new(0.05, 1e-4, LossKind::CeSinglelabel),
            hidden_dims: [64, 64],
            plan: assign_visibility(g.num_nodes(), n_hosts, pi, seed)?,
            mode: Mode::Parallel,
            barrier: false,
            eval_every: 100,
            inference: Inference::Shared,
            seed,
        };
        print!("seed {seed}:");
        for (v, total) in Variant::ALL.into_iter().zip(&mut totals) {
            let out = train_variant(&g, &cfg, v)?;
            let f1 = final_mean(&out.records, Role::Test).map_or(f64::NAN, |r| r.f1_micro);
            *total += f1;
            print!("  {v} {f1:.4}");
        }
        println!();
    }
    print!("mean:  ");
    for (v, total) in Variant::ALL.into_iter().zip(totals) {
        print!("  {v} {:.4}", total / seeds as f64);
    }
    println!();
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
