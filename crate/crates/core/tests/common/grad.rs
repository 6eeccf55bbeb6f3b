//! Finite-difference checks of the federated backward pass.

use feras::gcn::{self, Hyper, LossKind, ModelParams};
use feras::graph::{normalize_adjacency, Csr, SparseMatrix};
use ndarray::Array2;
use rand::Rng as _;

use super::*;

/// One host's view of a batch: its own first-layer output enters the shared
/// input scaled by `coeff`, the rest of the shared input is constant.
pub struct Case {
    pub adj: SparseMatrix,
    pub dense_adj: Array2<f64>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub visible: Vec<bool>,
    pub coeff: Vec<f64>,
    pub others: Array2<f64>,
    pub params: ModelParams,
    pub hyper: Hyper,
}

impl Case {
    fn shared(&self, p: &ModelParams) -> (Array2<f64>, gcn::ForwardTape<'_>) {
        let (h, tape) = gcn::forward_pre(p, &self.adj, &self.x).unwrap();
        let mut s = self.others.clone();
        for ((mut row, hr), &c) in s.rows_mut().into_iter().zip(h.rows()).zip(&self.coeff) {
            row.scaled_add(c, &hr);
        }
        (s, tape)
    }

    pub fn loss(&self, p: &ModelParams) -> f64 {
        let (s, mut tape) = self.shared(p);
        let out = gcn::forward_post(p, &s, &self.coeff, &mut tape).unwrap();
        gcn::loss(&out, &self.y, &self.visible, p, &self.hyper).unwrap()
    }

    pub fn grads(&self) -> ModelParams {
        let (s, mut tape) = self.shared(&self.params);
        let out = gcn::forward_post(&self.params, &s, &self.coeff, &mut tape).unwrap();
        gcn::backward(tape, &out, &self.y, &self.visible, &self.params, &self.hyper).unwrap()
    }

    /// Smallest |pre-activation| over both ReLUs; finite differences are only
    /// valid away from the kink.
    pub fn kink_margin(&self) -> f64 {
        let p = &self.params;
        let z1 = self.dense_adj.dot(&self.x).dot(&p.w1);
        let h1 = z1.mapv(|v| v.max(0.0));
        let mut s = self.others.clone();
        for ((mut row, hr), &c) in s.rows_mut().into_iter().zip(h1.rows()).zip(&self.coeff) {
            row.scaled_add(c, &hr);
        }
        let z2 = self.dense_adj.dot(&s).dot(&p.w2);
        z1.iter().chain(z2.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn random_case(kind: LossKind, r: &mut feras::rng::Rng) -> Case {
    let k = r.random_range(2..=12);
    let (m1, m2, m3) = (r.random_range(1..=6), r.random_range(1..=6), r.random_range(1..=6));
    let classes = r.random_range(1..=4).max(if kind == LossKind::CeSinglelabel { 2 } else { 1 });
    let edges = random_edges(k, 0.4, false, r);
    let local = Csr::from_edges(k, edges.iter().copied()).unwrap();
    let adj = normalize_adjacency(&local, k);
    let dense_adj = dense_norm_adj(k, &edges);
    let y = match kind {
        LossKind::CeSinglelabel => one_hot_labels(k, classes, r),
        LossKind::BceMultilabel => multi_hot_labels(k, classes, r),
        LossKind::Squared => uniform(k, classes, -1.0, 1.0, r),
    };
    let mut visible: Vec<bool> = (0..k).map(|_| r.random_bool(0.7)).collect();
    visible[0] = true;
    let coeff = (0..k)
        .map(|i| {
            if !visible[i] {
                0.0
            } else {
                1.0 / r.random_range(1..=4) as f64
            }
        })
        .collect();
    let mut params = ModelParams::glorot(m1, m2, m3, classes, r);
    params.w_dense.mapv_inplace(|v| v * 2.0);
    let freeze_head = r.random_bool(0.2);
    Case {
        adj,
        dense_adj,
        x: uniform(k, m1, -1.0, 1.0, r),
        y,
        visible,
        coeff,
        others: uniform(k, m2, 0.0, 0.5, r),
        params,
        hyper: Hyper {
            freeze_head,
            ..Hyper::new(0.1, r.random_range(0.0..0.1), kind)
        },
    }
}

/// Largest `|a − f| / max(|a|, |f|)` over coordinates, ignoring coordinates
/// where both are below `floor`.
pub fn max_rel_err(case: &Case, h: f64, floor: f64) -> f64 {
    let analytic = case.grads();
    let mut worst = 0.0f64;
    for (m, (g, _)) in analytic.matrices().into_iter().zip(case.params.matrices()).enumerate() {
        if m == 2 && case.hyper.freeze_head {
            assert!(g.iter().all(|&v| v == 0.0));
            continue;
        }
        for ((i, j), &a) in g.indexed_iter() {
            let mut plus = case.params.clone();
            plus.matrices_mut()[m][[i, j]] += h;
            let mut minus = case.params.clone();
            minus.matrices_mut()[m][[i, j]] -= h;
            let f = (case.loss(&plus) - case.loss(&minus)) / (2.0 * h);
            let scale = a.abs().max(f.abs());
            if scale < floor {
                continue;
            }
            worst = worst.max((a - f).abs() / scale);
        }
    }
    worst
}

pub fn check_kind(kind: LossKind, configs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < configs {
        let case = random_case(kind, &mut r);
        if case.kink_margin() < 1e-4 {
            continue;
        }
        worst = worst.max(max_rel_err(&case, 1e-6, 1e-7));
        done += 1;
    }
    worst
}
