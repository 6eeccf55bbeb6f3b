//! Random aggregation scenarios and an independent construction of Θ.

use std::collections::HashMap;

use feras::aggregator::{build_theta, EmbeddingTable};
use feras::federation::HostView;
use ndarray::{concatenate, Array2, Axis};
use rand::seq::index;
use rand::Rng as _;

use super::*;

pub struct Scenario {
    pub n: usize,
    pub views: Vec<HostView>,
    pub nodes: Vec<Vec<usize>>,
    pub embeddings: Vec<Array2<f64>>,
}

pub fn random_scenario(r: &mut feras::rng::Rng) -> Scenario {
    let n = r.random_range(1..=20);
    let hosts = r.random_range(1..=4);
    let dim = r.random_range(1..=5);
    let views = (0..hosts)
        .map(|h| HostView::new(h, (0..n).map(|_| r.random_bool(0.6)).collect()))
        .collect();
    let nodes: Vec<Vec<usize>> = (0..hosts)
        .map(|_| {
            let k = r.random_range(1..=n);
            index::sample(r, n, k).into_vec()
        })
        .collect();
    let embeddings = nodes.iter().map(|s| uniform(s.len(), dim, -1.0, 1.0, r)).collect();
    Scenario {
        n,
        views,
        nodes,
        embeddings,
    }
}

/// Θ built from a node → [(host, row)] index instead of the occurrence list.
pub fn oracle_theta(s: &Scenario) -> Vec<Array2<f64>> {
    let offsets: Vec<usize> = s
        .nodes
        .iter()
        .scan(0, |acc, v| {
            let o = *acc;
            *acc += v.len();
            Some(o)
        })
        .collect();
    let total: usize = s.nodes.iter().map(Vec::len).sum();
    let mut pushers: HashMap<usize, Vec<usize>> = HashMap::new();
    for (h, list) in s.nodes.iter().enumerate() {
        for (i, &v) in list.iter().enumerate() {
            if s.views[h].contains(v) {
                pushers.entry(v).or_default().push(offsets[h] + i);
            }
        }
    }
    s.nodes
        .iter()
        .map(|list| {
            let mut t = Array2::zeros((list.len(), total));
            for (i, v) in list.iter().enumerate() {
                if let Some(cols) = pushers.get(v) {
                    for &c in cols {
                        t[[i, c]] = 1.0 / cols.len() as f64;
                    }
                }
            }
            t
        })
        .collect()
}

pub fn table_pulls(s: &Scenario) -> Vec<Array2<f64>> {
    let mut table = EmbeddingTable::new(s.n, s.embeddings[0].ncols());
    for ((list, e), view) in s.nodes.iter().zip(&s.embeddings).zip(&s.views) {
        table.push_embeddings(0, list, e, &view.flags(list)).unwrap();
    }
    s.nodes.iter().map(|list| table.pull_embeddings(list)).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Worst disagreement between the table pull, `Θ·x̂` from the library and
/// `Θ·x̂` from the oracle, over `count` scenarios.
pub fn theta_agreement(seed: u64, count: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let s = random_scenario(&mut r);
        let views: Vec<_> = s.embeddings.iter().map(|e| e.view()).collect();
        let stacked = concatenate(Axis(0), &views).unwrap();
        let lib = build_theta(&s.nodes, &s.views).unwrap();
        let oracle = oracle_theta(&s);
        for ((pull, l), o) in table_pulls(&s).iter().zip(&lib).zip(&oracle) {
            worst = worst.max(max_abs_diff(l, o));
            worst = worst.max(max_abs_diff(pull, &l.dot(&stacked)));
            worst = worst.max(max_abs_diff(pull, &o.dot(&stacked)));
        }
    }
    worst
}

/// Number of rows whose sum is neither 1 (some host pushed the node) nor 0
/// (nobody could see it).
pub fn bad_row_sums(seed: u64, count: usize) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..count {
        let s = random_scenario(&mut r);
        let lib = build_theta(&s.nodes, &s.views).unwrap();
        for (list, t) in s.nodes.iter().zip(&lib) {
            for (&v, row) in list.iter().zip(t.rows()) {
                let pushed = s.nodes.iter().zip(&s.views).any(|(l, view)| view.contains(v) && l.contains(&v));
                let expect = if pushed { 1.0 } else { 0.0 };
                if (row.sum() - expect).abs() > 1e-12 {
                    bad += 1;
                }
            }
        }
    }
    bad
}
