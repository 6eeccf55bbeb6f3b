//! Generate a stochastic block model, write it in the on-disk dataset format
//! and load it back.

use feras::graph::{load_graph, Role};
use feras::synth::{write_synthetic, SyntheticSpec};

pub fn run() -> feras::Result<()> {
    let spec = SyntheticSpec {
        blocks: 4,
        nodes_per_block: 125,
        p_in: 0.1,
        p_out: 0.005,
        feature_dim: 8,
        noise: 2.0,
        seed: 11,
    };
    let dir = std::env::temp_dir().join("feras-examples").join("sbm");
    let g = write_synthetic(&spec, &dir)?;
    let back = load_graph(&dir)?;
    assert_eq!(back.num_edges(), g.num_edges());

    println!("{} nodes, {} edges, {} classes -> {}", g.num_nodes(), g.num_edges(), g.num_classes(), dir.display());
    for role in [Role::Train, Role::Val, Role::Test] {
        println!("  {role:<5} {}", g.nodes_with_role(role).len());
    }
    let mean_degree = 2.0 * g.num_edges() as f64 / g.num_nodes() as f64;
    println!("  mean degree {mean_degree:.2}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
