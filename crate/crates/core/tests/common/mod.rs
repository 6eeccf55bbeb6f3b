#![allow(dead_code)]

pub mod criteria;
pub mod grad;
pub mod theta;

use feras::federation::{assign_visibility, FederationPlan, HostView};
use feras::gcn::{Hyper, LossKind, ModelParams};
use feras::graph::{Csr, Graph, Role, Task};
use feras::rng::Rng;
use feras::sampler::SamplerConfig;
use feras::synth::{generate_synthetic, SyntheticSpec};
use feras::theory::ContractionInstance;

use feras::trainer::{Inference, Mode, TrainConfig};
use ndarray::Array2;
use rand::distr::{Distribution, Uniform};
use rand::seq::index;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    feras::rng::stream(seed, 77)
}

/// Erdős–Rényi edges, plus a path through all nodes when `connected`.
pub fn random_edges(n: usize, p: f64, connected: bool, r: &mut Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    if connected {
        let order = index::sample(r, n, n).into_vec();
        edges.extend(order.windows(2).map(|w| (w[0], w[1])));
    }
    edges
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, r: &mut Rng) -> Array2<f64> {
    let d = Uniform::new(lo, hi).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || d.sample(r))
}

pub fn one_hot_labels(n: usize, classes: usize, r: &mut Rng) -> Array2<f64> {
    let mut y = Array2::zeros((n, classes));
    for i in 0..n {
        y[[i, r.random_range(0..classes)]] = 1.0;
    }
    y
}

pub fn multi_hot_labels(n: usize, classes: usize, r: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, classes), || if r.random::<bool>() { 1.0 } else { 0.0 })
}

/// A random singlelabel graph whose nodes are all training nodes.
pub fn random_graph(n: usize, p: f64, features: usize, classes: usize, connected: bool, r: &mut Rng) -> Graph {
    let adj = Csr::from_edges(n, random_edges(n, p, connected, r)).unwrap();
    let x = uniform(n, features, 0.0, 1.0, r);
    let y = one_hot_labels(n, classes, r);
    Graph::new(adj, x, y, vec![Role::Train; n], Task::Singlelabel).unwrap()
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` built densely from an edge list.
pub fn dense_norm_adj(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut a = Array2::<f64>::eye(n);
    for &(u, v) in edges {
        if u != v {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
    }
    let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt())
}

/// Dense normalized adjacency of the subgraph induced on `nodes`.
pub fn dense_induced(g: &Graph, nodes: &[usize]) -> Array2<f64> {
    let pos = |v: usize| nodes.iter().position(|&u| u == v);
    let mut edges = Vec::new();
    for (i, &u) in nodes.iter().enumerate() {
        for &v in g.adjacency().neighbors(u) {
            if let Some(j) = pos(v) {
                edges.push((i, j));
            }
        }
    }
    dense_norm_adj(nodes.len(), &edges)
}

/// The SBM benchmark used by the trend criteria.
pub fn sbm_benchmark() -> Graph {
    generate_synthetic(&SyntheticSpec {
        blocks: 4,
        nodes_per_block: 125,
        p_in: 0.1,
        p_out: 0.005,
        feature_dim: 8,
        noise: 2.0,
        seed: 11,
    })
    .unwrap()
}

pub fn benchmark_config(g: &Graph, n_hosts: usize, kappa: f64, q: usize, seed: u64) -> TrainConfig {
    let pi = if kappa == 0.0 {
        0.0
    } else {
        kappa * n_hosts as f64 / (n_hosts as f64 - 1.0)
    };
    TrainConfig {
        epochs: 300,
        n_hosts,
        q,
        sampler: SamplerConfig::rw(25, 2),
        hyper: Hyper::new(0.05, 1e-4, LossKind::CeSinglelabel),
        hidden_dims: [64, 64],
        plan: assign_visibility(g.num_nodes(), n_hosts, pi, seed).unwrap(),
        mode: Mode::Sequential,
        barrier: false,
        eval_every: 50,
        inference: Inference::Shared,
        seed,
    }
}

/// Independent dense implementation of the three-matrix network used as an
/// oracle for the federated trainer with one host.
pub mod dense {
    use super::*;

    pub struct Forward {
        pub ax: Array2<f64>,
        pub z1: Array2<f64>,
        pub h1: Array2<f64>,
        pub ah1: Array2<f64>,
        pub z2: Array2<f64>,
        pub h2: Array2<f64>,
        pub out: Array2<f64>,
    }

    fn relu(z: &Array2<f64>) -> Array2<f64> {
        z.mapv(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn forward(a: &Array2<f64>, x: &Array2<f64>, p: &ModelParams) -> Forward {
        let ax = a.dot(x);
        let z1 = ax.dot(&p.w1);
        let h1 = relu(&z1);
        let ah1 = a.dot(&h1);
        let z2 = ah1.dot(&p.w2);
        let h2 = relu(&z2);
        let out = h2.dot(&p.w_dense);
        Forward {
            ax,
            z1,
            h1,
            ah1,
            z2,
            h2,
            out,
        }
    }

    fn softmax_row(z: &[f64]) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    fn reg(p: &ModelParams, lambda: f64) -> f64 {
        let sq = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
        0.5 * lambda * (sq(&p.w1) + sq(&p.w2) + sq(&p.w_dense))
    }

    /// Mean softmax cross-entropy plus the L2 penalty on every matrix.
    pub fn ce_loss(out: &Array2<f64>, y: &Array2<f64>, p: &ModelParams, lambda: f64) -> f64 {
        let n = out.nrows() as f64;
        let mut total = 0.0;
        for (o, t) in out.rows().into_iter().zip(y.rows()) {
            let s = softmax_row(o.as_slice().unwrap());
            total -= s.iter().zip(t.iter()).map(|(si, ti)| ti * si.ln()).sum::<f64>();
        }
        total / n + reg(p, lambda)
    }

    pub fn ce_grads(a: &Array2<f64>, f: &Forward, y: &Array2<f64>, p: &ModelParams, lambda: f64) -> ModelParams {
        let n = f.out.nrows() as f64;
        let mut d_out = Array2::zeros(f.out.raw_dim());
        for (i, o) in f.out.rows().into_iter().enumerate() {
            let s = softmax_row(o.to_vec().as_slice());
            for j in 0..s.len() {
                d_out[[i, j]] = (s[j] - y[[i, j]]) / n;
            }
        }
        let d_dense = f.h2.t().dot(&d_out) + lambda * &p.w_dense;
        let mut d_z2 = d_out.dot(&p.w_dense.t());
        d_z2.zip_mut_with(&f.z2, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let d_w2 = f.ah1.t().dot(&d_z2) + lambda * &p.w2;
        let mut d_z1 = a.t().dot(&d_z2.dot(&p.w2.t()));
        d_z1.zip_mut_with(&f.z1, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let d_w1 = f.ax.t().dot(&d_z1) + lambda * &p.w1;
        ModelParams {
            w1: d_w1,
            w2: d_w2,
            w_dense: d_dense,
        }
    }
}

/// Nodes visible to each host, as a dense 0/1 matrix `hosts × nodes`.
pub fn visibility_matrix(views: &[HostView]) -> Vec<Vec<bool>> {
    views
        .iter()
        .map(|v| (0..v.num_nodes()).map(|i| v.contains(i)).collect())
        .collect()
}

/// A small federated problem in the linear regime where the contraction
/// conditions hold.
pub struct TheoryCase {
    pub inst: ContractionInstance,
    pub scale: f64,
}

pub fn theory_case(seed: u64, n_hosts: usize, eta: f64, lambda: f64) -> TheoryCase {
    let mut r = rng(seed);
    let n = 10;
    let classes = 2;
    let adj = Csr::from_edges(n, random_edges(n, 0.3, true, &mut r)).unwrap();
    let x = uniform(n, 3, 0.0, 0.1, &mut r);
    let y = one_hot_labels(n, classes, &mut r);
    let g = Graph::new(adj, x, y, vec![Role::Train; n], Task::Singlelabel).unwrap();
    let plan = assign_visibility(n, n_hosts, 0.5, seed).unwrap();
    let nodes: Vec<Vec<usize>> = (0..n_hosts)
        .map(|_| {
            let k = r.random_range(6..=n);
            let mut s = index::sample(&mut r, n, k).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let hyper = Hyper {
        freeze_head: true,
        ..Hyper::new(eta, lambda, LossKind::Squared)
    };
    TheoryCase {
        inst: ContractionInstance::new(g, plan, &nodes, hyper, 4).unwrap(),
        scale: 0.2,
    }
}

pub fn plan_of(views: Vec<Vec<bool>>) -> FederationPlan {
    let n_hosts = views.len();
    FederationPlan {
        n_hosts,
        pi_private: 0.0,
        kappa: 0.0,
        views: views.into_iter().enumerate().map(|(h, v)| HostView::new(h, v)).collect(),
        seed: 0,
    }
}
