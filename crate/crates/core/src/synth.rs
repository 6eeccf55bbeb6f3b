//! Stochastic block model datasets.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FerasError, Result};
use crate::graph::{write_graph, Csr, Graph, Role, Task};
use crate::rng;

/// Fractions of nodes assigned to train and validation; the rest is test.
pub const SPLIT: (f64, f64) = (0.66, 0.10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn num_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FerasError::Config(m));
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return bad("synthetic graph needs at least one block and one node per block".into());
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            ));
        }
        if self.feature_dim < self.blocks {
            return bad(format!(
                "feature_dim {} is smaller than the number of blocks {}",
                self.feature_dim, self.blocks
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be a finite non-negative number, got {}", self.noise));
        }
        Ok(())
    }
}

/// Block of each node; nodes are laid out block by block.
pub fn block_of(spec: &SyntheticSpec, node: usize) -> usize {
    node / spec.nodes_per_block
}

/// Samples an SBM graph. Labels are one-hot block ids, features are the
/// one-hot block id padded to `feature_dim` plus Gaussian noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.num_nodes();
    let mut r = rng::stream(spec.seed, 0);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block_of(spec, u) == block_of(spec, v) {
                spec.p_in
            } else {
                spec.p_out
            };
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let adj = Csr::from_edges(n, edges)?;

    let noise = Normal::new(0.0, spec.noise).map_err(|e| FerasError::Config(e.to_string()))?;
    let mut features = Array2::from_shape_simple_fn((n, spec.feature_dim), || noise.sample(&mut r));
    let mut labels = Array2::zeros((n, spec.blocks));
    for v in 0..n {
        let b = block_of(spec, v);
        features[[v, b]] += 1.0;
        labels[[v, b]] = 1.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let n_train = (SPLIT.0 * n as f64).round() as usize;
    let n_val = (SPLIT.1 * n as f64).round() as usize;
    let mut roles = vec![Role::Test; n];
    for (pos, &v) in order.iter().enumerate() {
        if pos < n_train {
            roles[v] = Role::Train;
        } else if pos < n_train + n_val {
            roles[v] = Role::Val;
        }
    }
    Graph::new(adj, features, labels, roles, Task::Singlelabel)
}

/// Generates and writes a dataset directory.
pub fn write_synthetic(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<Graph> {
    let g = generate_synthetic(spec)?;
    write_graph(&g, dir)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(blocks: usize, per: usize, p_in: f64, p_out: f64) -> SyntheticSpec {
        SyntheticSpec {
            blocks,
            nodes_per_block: per,
            p_in,
            p_out,
            feature_dim: blocks,
            noise: 0.1,
            seed: 1,
        }
    }

    #[test]
    fn two_disjoint_cliques() {
        let g = generate_synthetic(&spec(2, 5, 1.0, 0.0)).unwrap();
        assert_eq!(g.num_edges(), 20);
        for u in 0..10 {
            assert_eq!(g.adjacency().degree(u), 4);
            for &v in g.adjacency().neighbors(u) {
                assert_eq!(u / 5, v / 5);
            }
        }
        assert!(!g.adjacency().is_connected());
    }

    #[test]
    fn split_sizes() {
        let g = generate_synthetic(&spec(4, 25, 0.2, 0.01)).unwrap();
        assert_eq!(g.nodes_with_role(Role::Train).len(), 66);
        assert_eq!(g.nodes_with_role(Role::Val).len(), 10);
        assert_eq!(g.nodes_with_role(Role::Test).len(), 24);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(3, 10, 0.3, 0.05);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.features(), b.features());
        assert_eq!(a.roles(), b.roles());
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(generate_synthetic(&spec(2, 3, 0.1, 0.2)).is_err());
        assert!(generate_synthetic(&spec(2, 3, 1.5, 0.2)).is_err());
        let mut s = spec(3, 3, 0.5, 0.1);
        s.feature_dim = 2;
        assert!(s.validate().is_err());
    }
}
