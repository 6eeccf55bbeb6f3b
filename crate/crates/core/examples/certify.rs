//! Certify the contraction conditions for a small federated instance and
//! print the report that `feras certify` writes as JSON.

use feras::config::ExperimentConfig;
use feras::experiment::certify_graph;
use feras::synth::generate_synthetic;

const CONFIG: &str = r#"
[dataset.synthetic]
blocks = 2
nodes_per_block = 5
p_in = 0.8
p_out = 0.1
feature_dim = 3
noise = 0.1
seed = 5

[train]
n_hosts = 2
pi_private = 0.4
hidden_dims = [4, 2]
eta = 0.05
lambda = 0.5
loss_kind = "squared"
freeze_head = true
seed = 2
"#;

pub fn run() -> feras::Result<()> {
    // λ = 0.5 leaves too little room for ρ(M1ᵀM1); λ = 8 certifies.
    for lambda in [0.5, 8.0] {
        println!("== lambda = {lambda}");
        report(&CONFIG.replace("lambda = 0.5", &format!("lambda = {lambda}")))?;
    }
    Ok(())
}

fn report(config: &str) -> feras::Result<()> {
    let cfg = ExperimentConfig::from_toml(config)?;
    let feras::config::DatasetSpec::Synthetic(spec) = &cfg.dataset else {
        unreachable!("config uses a synthetic dataset")
    };
    let g = generate_synthetic(spec)?;
    let out = certify_graph(&cfg, &g)?;

    println!("linear regime at initial weights: {}", out.instance.linear_regime);
    for h in &out.hosts {
        let r = &h.report;
        println!("host {}", h.host);
        println!("  rho(M1'M1) = {:.4e}  (= rho(w2 w2') {:.3e} x rho(core) {:.3e})", r.rho_m1, r.rho_w2, r.rho_core);
        println!("  bound lambda / 2c* = {:.4e}  ok: {}", r.rho_m1_bound, r.satisfied[0]);
        println!("  eta = {}  eta_max = {:.4e}  ok: {}", r.eta, r.eta_max, r.satisfied[1]);
        println!("  contraction constant {:.6}", r.contraction_constant);
        println!(
            "  shared {:.4e} vs plain {:.4e}",
            h.shared_vs_plain.rho_shared, h.shared_vs_plain.rho_plain
        );
    }
    println!("all satisfied: {}", out.all_satisfied);
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
