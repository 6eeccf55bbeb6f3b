//! End-to-end checks shared by the focused tests and the acceptance runner.

use std::fs;
use std::thread;

use feras::aggregator::build_theta;
use feras::config::{DatasetSpec, ExperimentConfig, TrainSection};
use feras::experiment::run_experiment;
use feras::gcn::{sgd_step, Hyper, LossKind};
use feras::graph::{induce_subgraph, Csr, Graph, Role, Task};
use feras::sampler::{SamplerConfig, TrainSampler};
use feras::synth::{generate_synthetic, SyntheticSpec};
use feras::theory::{compare_shared_vs_plain, decay_trajectory, empirical_contraction, fixed_point};
use feras::trainer::{self, epochs_to_threshold, final_mean, HostTag, Variant};
use ndarray::Axis;
use rand::seq::index;
use rand::Rng as _;

use super::*;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: String) -> Self {
        Check { pass, detail }
    }
}

pub fn centralized_sbm() -> Graph {
    generate_synthetic(&SyntheticSpec {
        blocks: 3,
        nodes_per_block: 100,
        p_in: 0.08,
        p_out: 0.01,
        feature_dim: 8,
        noise: 1.0,
        seed: 4,
    })
    .unwrap()
}

/// Feras with one host and no private nodes against the dense monolithic
/// trainer fed the same subgraph sequence. Returns the largest per-epoch
/// loss difference and the final weight distance.
pub fn centralized_gap(g: &Graph, epochs: usize, seed: u64) -> (f64, f64) {
    let cfg = TrainConfig {
        epochs,
        n_hosts: 1,
        q: 1,
        sampler: SamplerConfig::rw(20, 2),
        hyper: Hyper::new(0.1, 1e-3, LossKind::CeSinglelabel),
        hidden_dims: [16, 16],
        plan: assign_visibility(g.num_nodes(), 1, 0.0, seed).unwrap(),
        mode: Mode::Sequential,
        barrier: false,
        eval_every: epochs,
        inference: Inference::Shared,
        seed,
    };
    let out = trainer::train(g, &cfg).unwrap();
    let fed_losses: Vec<f64> = out
        .records
        .iter()
        .filter(|r| r.split == Role::Train && r.host == HostTag::Host(0))
        .map(|r| r.loss)
        .collect();
    assert_eq!(fed_losses.len(), epochs);

    let sampler = TrainSampler::new(g, &g.nodes_with_role(Role::Train)).unwrap();
    let mut r = feras::rng::host_rng(seed, 0);
    let mut p = trainer::init_params(g, &cfg);
    let mut worst = 0.0f64;
    for fed in fed_losses {
        let nodes = sampler.sample(&cfg.sampler, &mut r);
        let a = dense_induced(g, &nodes);
        let x = g.features().select(Axis(0), &nodes);
        let y = g.labels().select(Axis(0), &nodes);
        let f = dense::forward(&a, &x, &p);
        worst = worst.max((dense::ce_loss(&f.out, &y, &p, cfg.hyper.lambda) - fed).abs());
        let grads = dense::ce_grads(&a, &f, &y, &p, cfg.hyper.lambda);
        p = sgd_step(&p, &grads, cfg.hyper.eta).unwrap();
    }
    (worst, p.distance(&out.params[0], true))
}

pub fn centralized_equivalence() -> Check {
    let g = centralized_sbm();
    let (loss_gap, weight_gap) = centralized_gap(&g, 50, 3);
    Check::new(
        loss_gap < 1e-10 && weight_gap < 1e-10,
        format!("max |loss diff| {loss_gap:.2e}, final weight distance {weight_gap:.2e}"),
    )
}

pub fn gradient_oracle() -> Check {
    let kinds = [LossKind::Squared, LossKind::BceMultilabel, LossKind::CeSinglelabel];
    let errs: Vec<f64> = kinds.iter().zip(1..).map(|(&k, s)| grad::check_kind(k, 50, s)).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Check::new(
        worst < 1e-5,
        format!("max rel err squared {:.1e}, bce {:.1e}, ce {:.1e}", errs[0], errs[1], errs[2]),
    )
}

pub fn theta_equivalence() -> Check {
    let worst = theta::theta_agreement(5, 100);
    Check::new(worst <= 1e-12, format!("max |pull − Θx̂| {worst:.2e} over 100 scenarios"))
}

pub fn theta_row_sums() -> Check {
    let bad = theta::bad_row_sums(6, 100);
    Check::new(bad == 0, format!("{bad} rows off 0/1 over 100 scenarios"))
}

/// 200 single-round pairs spread over five instances, then 40 pairs each for
/// two and five rounds.
pub fn contraction() -> Check {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut lines = Vec::new();
    for (q, per_instance) in [(1, 40), (2, 8), (5, 8)] {
        let mut max_ratio = 0.0f64;
        let mut bound = 0.0;
        let mut trials = 0;
        for seed in 0..5 {
            let case = theory_case(seed, 3, 0.1, 0.5);
            let s = match empirical_contraction(&case.inst, q, per_instance, case.scale, &mut rng(seed + 500 + q as u64)) {
                Ok(s) => s,
                Err(e) => return Check::new(false, format!("instance {seed}: {e}")),
            };
            max_ratio = max_ratio.max(s.max_ratio);
            bound = s.bound;
            trials += s.trials - s.skipped;
        }
        worst_excess = worst_excess.max(max_ratio - bound);
        lines.push(format!("q={q}: {max_ratio:.6} vs {bound:.6} ({trials} pairs)"));
    }
    Check::new(worst_excess <= 1e-6, lines.join(", "))
}

pub fn decay() -> Check {
    let mut worst = f64::NEG_INFINITY;
    for seed in [3, 4] {
        let case = theory_case(seed, 3, 0.1, 0.5);
        let start = case.inst.random_point(case.scale, &mut rng(seed + 6));
        let w_star = fixed_point(&case.inst, &start, 1e-14, 20_000).unwrap();
        for p in decay_trajectory(&case.inst, &start, &w_star, 200).unwrap() {
            worst = worst.max(p.distance - p.bound);
        }
    }
    Check::new(worst <= 1e-8, format!("max (distance − bound) {worst:.2e} over 2×201 points"))
}

/// Random connected graph of 4..=15 nodes; host 0 samples all of it, the
/// other hosts random subsets, and every host sees a random part.
fn shared_case(r: &mut Rng) -> (Graph, Vec<f64>) {
    let n = r.random_range(4..=15);
    let hosts = r.random_range(2..=4);
    let adj = Csr::from_edges(n, random_edges(n, 0.25, true, r)).unwrap();
    let g = Graph::new(
        adj,
        uniform(n, r.random_range(1..=4), 0.0, 1.0, r),
        one_hot_labels(n, 2, r),
        vec![Role::Train; n],
        Task::Singlelabel,
    )
    .unwrap();
    let mut views: Vec<Vec<bool>> = (0..hosts).map(|_| (0..n).map(|_| r.random_bool(0.7)).collect()).collect();
    views[0] = vec![true; n];
    let all: Vec<usize> = (0..n).collect();
    let mut nodes = vec![all];
    for _ in 1..hosts {
        let k = r.random_range(1..=n);
        nodes.push(index::sample(r, n, k).into_vec());
    }
    let thetas = build_theta(&nodes, &plan_of(views).views).unwrap();
    let star = (0..n).map(|i| thetas[0][[i, i]]).collect();
    (g, star)
}

pub fn shared_vs_plain() -> Check {
    let mut r = rng(31);
    let mut worst = f64::NEG_INFINITY;
    let mut strict = 0;
    for _ in 0..100 {
        let (g, star) = shared_case(&mut r);
        let all: Vec<usize> = (0..g.num_nodes()).collect();
        let sg = induce_subgraph(&g, &all).unwrap();
        let c = compare_shared_vs_plain(&sg, &star, g.features()).unwrap();
        worst = worst.max(c.rho_shared - c.rho_plain);
        if c.rho_shared < c.rho_plain - 1e-9 {
            strict += 1;
        }
    }
    Check::new(
        worst <= 1e-9,
        format!("max (shared − plain) {worst:.2e}; strictly smaller in {strict}/100"),
    )
}

/// Mean final test F1 of each variant over `seeds` on the benchmark.
pub fn variant_means(g: &Graph, kappa: f64, seeds: u64) -> Vec<(Variant, f64)> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let scores: Vec<f64> = thread::scope(|s| {
                let handles: Vec<_> = (0..seeds)
                    .map(|seed| {
                        s.spawn(move || {
                            let out = trainer::train_variant(g, &benchmark_config(g, 3, kappa, 10, seed), v).unwrap();
                            final_mean(&out.records, Role::Test).unwrap().f1_micro
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            (v, scores.iter().sum::<f64>() / seeds as f64)
        })
        .collect()
}

pub fn kappa_trend() -> Check {
    let g = sbm_benchmark();
    let hi = variant_means(&g, 0.6, 5);
    let lo = variant_means(&g, 0.0, 5);
    let [f, i, s] = [hi[0].1, hi[1].1, hi[2].1];
    let spread = lo.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
        - lo.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let pass = f >= s && f >= i && f - i >= 0.02 && spread <= 0.01;
    Check::new(
        pass,
        format!(
            "κ=0.6 feras {f:.4} isolated {i:.4} sw {s:.4}; κ=0 feras {:.4} isolated {:.4} sw {:.4} (spread {spread:.4})",
            lo[0].1, lo[1].1, lo[2].1
        ),
    )
}

/// Mean epochs until the mean validation F1 first reaches `threshold`.
pub fn epochs_to_reach(g: &Graph, q: usize, seeds: u64, threshold: f64) -> Option<f64> {
    let hits: Vec<Option<usize>> = thread::scope(|s| {
        let handles: Vec<_> = (0..seeds)
            .map(|seed| {
                s.spawn(move || {
                    let mut cfg = benchmark_config(g, 3, 0.4, q, seed);
                    cfg.eval_every = 1;
                    let out = trainer::train(g, &cfg).unwrap();
                    epochs_to_threshold(&out.records, Role::Val, threshold)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let hits: Option<Vec<usize>> = hits.into_iter().collect();
    hits.map(|h| h.iter().sum::<usize>() as f64 / seeds as f64)
}

pub fn q_insensitivity() -> Check {
    let g = sbm_benchmark();
    let means: Vec<(usize, Option<f64>)> = [1, 5, 10].iter().map(|&q| (q, epochs_to_reach(&g, q, 3, 0.8))).collect();
    let text = means
        .iter()
        .map(|(q, m)| match m {
            Some(m) => format!("q={q}: {m:.1}"),
            None => format!("q={q}: not reached"),
        })
        .collect::<Vec<_>>()
        .join(", ");
    let vals: Option<Vec<f64>> = means.iter().map(|p| p.1).collect();
    let pass = vals.is_some_and(|v| {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        max <= 1.15 * min
    });
    Check::new(pass, format!("mean epochs to val F1 0.8: {text}"))
}

pub fn determinism_config() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic(SyntheticSpec {
            blocks: 3,
            nodes_per_block: 40,
            p_in: 0.15,
            p_out: 0.01,
            feature_dim: 6,
            noise: 1.0,
            seed: 9,
        }),
        variant: Variant::Feras,
        output_dir: "out".into(),
        train: TrainSection {
            epochs: 40,
            n_hosts: 3,
            pi_private: 0.6,
            q: 5,
            hidden_dims: [16, 16],
            eval_every: 5,
            seed: 12,
            sampler: SamplerConfig::rw(10, 2),
            ..TrainSection::default()
        },
        sweep: None,
    }
}

pub fn determinism() -> Check {
    let cfg = determinism_config();
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}"));
            run_experiment(&cfg, &out).unwrap();
            fs::read(out.join("metrics.csv")).unwrap()
        })
        .collect();
    Check::new(
        runs[0] == runs[1] && !runs[0].is_empty(),
        format!("metrics.csv {} bytes, identical: {}", runs[0].len(), runs[0] == runs[1]),
    )
}

