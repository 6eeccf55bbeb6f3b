//! The four subgraph samplers on the same training set.

use feras::graph::Role;
use feras::rng;
use feras::sampler::{SamplerConfig, TrainSampler};
use feras::synth::{generate_synthetic, SyntheticSpec};

pub fn run() -> feras::Result<()> {
    let g = generate_synthetic(&SyntheticSpec {
        blocks: 3,
        nodes_per_block: 60,
        p_in: 0.1,
        p_out: 0.01,
        feature_dim: 4,
        noise: 1.0,
        seed: 1,
    })?;
    let train = g.nodes_with_role(Role::Train);
    let sampler = TrainSampler::new(&g, &train)?;
    let mut r = rng::host_rng(0, 0);

    println!("{} training nodes", train.len());
    for cfg in [
        SamplerConfig::node(40),
        SamplerConfig::edge(20),
        SamplerConfig::rw(15, 2),
        SamplerConfig::mrw(10, 3),
    ] {
        let sizes: Vec<usize> = (0..200).map(|_| sampler.sample(&cfg, &mut r).len()).collect();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        let nodes = sampler.sample(&cfg, &mut r);
        println!(
            "{:?}: mean size {mean:.1}, range {}..={}, e.g. {:?}...",
            cfg.kind,
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap(),
            &nodes[..nodes.len().min(6)]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
