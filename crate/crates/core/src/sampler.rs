//! Subgraph samplers: node, edge, random-walk and multidimensional random-walk.
//!
//! All four mechanisms operate on the subgraph induced by the training nodes,
//! so validation and test nodes never enter a training batch. The returned
//! node list is deduplicated and sorted ascending.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FerasError, Result};
use crate::graph::{Csr, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Node,
    Edge,
    Rw,
    Mrw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Draws for the node sampler; frontier size for the multidimensional walk.
    #[serde(default = "default_budget")]
    pub node_budget: usize,
    #[serde(default = "default_budget")]
    pub edge_budget: usize,
    #[serde(default = "default_roots")]
    pub roots: usize,
    /// Walk length for `rw`; steps per frontier slot for `mrw`.
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_budget() -> usize {
    100
}

fn default_roots() -> usize {
    25
}

fn default_depth() -> usize {
    2
}

impl SamplerConfig {
    pub fn node(budget: usize) -> Self {
        SamplerConfig {
            kind: SamplerKind::Node,
            node_budget: budget,
            edge_budget: default_budget(),
            roots: default_roots(),
            depth: default_depth(),
        }
    }

    pub fn edge(budget: usize) -> Self {
        SamplerConfig {
            kind: SamplerKind::Edge,
            edge_budget: budget,
            ..Self::node(default_budget())
        }
    }

    pub fn rw(roots: usize, depth: usize) -> Self {
        SamplerConfig {
            kind: SamplerKind::Rw,
            roots,
            depth,
            ..Self::node(default_budget())
        }
    }

    pub fn mrw(frontier: usize, depth: usize) -> Self {
        SamplerConfig {
            kind: SamplerKind::Mrw,
            node_budget: frontier,
            depth,
            ..Self::node(default_budget())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: usize| {
            if v == 0 {
                Err(FerasError::Config(format!("sampler.{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        check("node_budget", self.node_budget)?;
        check("edge_budget", self.edge_budget)?;
        check("roots", self.roots)?;
        check("depth", self.depth)
    }
}

/// Precomputed sampling state for one graph's training nodes.
#[derive(Debug, Clone)]
pub struct TrainSampler {
    train_nodes: Vec<usize>,
    /// Pattern induced on `train_nodes`, indexed by position in that list.
    train_adj: Csr,
    node_dist: WeightedIndex<f64>,
    edges: Vec<(usize, usize)>,
    edge_dist: Option<WeightedIndex<f64>>,
}

impl TrainSampler {
    pub fn new(g: &Graph, train_nodes: &[usize]) -> Result<Self> {
        if train_nodes.is_empty() {
            return Err(FerasError::EmptySplit("train"));
        }
        let mut train_nodes = train_nodes.to_vec();
        train_nodes.sort_unstable();
        let train_adj = g.adjacency().induce(&train_nodes)?;
        let deg = |i: usize| train_adj.degree(i) as f64;

        // Column i of Ã = A + I has deg(i) + 1 ones.
        let node_dist = WeightedIndex::new((0..train_nodes.len()).map(|i| deg(i) + 1.0))
            .expect("positive weights");
        let edges: Vec<(usize, usize)> = train_adj.edges().collect();
        let edge_dist = if edges.is_empty() {
            None
        } else {
            Some(
                WeightedIndex::new(edges.iter().map(|&(u, v)| 1.0 / deg(u) + 1.0 / deg(v)))
                    .expect("positive weights"),
            )
        };
        Ok(TrainSampler {
            train_nodes,
            train_adj,
            node_dist,
            edges,
            edge_dist,
        })
    }

    pub fn train_nodes(&self) -> &[usize] {
        &self.train_nodes
    }

    /// Draws one subgraph node list.
    pub fn sample<R: Rng + ?Sized>(&self, cfg: &SamplerConfig, rng: &mut R) -> Vec<usize> {
        let n = self.train_nodes.len();
        let mut hit = vec![false; n];
        match cfg.kind {
            SamplerKind::Node => {
                for _ in 0..cfg.node_budget {
                    hit[self.node_dist.sample(rng)] = true;
                }
            }
            SamplerKind::Edge => match &self.edge_dist {
                Some(dist) => {
                    for _ in 0..cfg.edge_budget {
                        let (u, v) = self.edges[dist.sample(rng)];
                        hit[u] = true;
                        hit[v] = true;
                    }
                }
                // No training edges: fall back to uniform node draws.
                None => {
                    for _ in 0..cfg.edge_budget {
                        hit[rng.random_range(0..n)] = true;
                    }
                }
            },
            SamplerKind::Rw => {
                for _ in 0..cfg.roots {
                    let mut cur = rng.random_range(0..n);
                    hit[cur] = true;
                    for _ in 0..cfg.depth {
                        match self.train_adj.neighbors(cur).choose(rng) {
                            Some(&next) => {
                                cur = next;
                                hit[cur] = true;
                            }
                            None => break,
                        }
                    }
                }
            }
            SamplerKind::Mrw => self.multidim_walk(cfg, rng, &mut hit),
        }
        hit.iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(i, _)| self.train_nodes[i])
            .collect()
    }

    /// Frontier walk: pick a frontier slot with probability proportional to
    /// its degree, move it to a uniform neighbour, record the new node.
    fn multidim_walk<R: Rng + ?Sized>(&self, cfg: &SamplerConfig, rng: &mut R, hit: &mut [bool]) {
        let n = self.train_nodes.len();
        let mut frontier: Vec<usize> = index::sample(rng, n, cfg.node_budget.min(n)).into_vec();
        for &f in &frontier {
            hit[f] = true;
        }
        let steps = cfg.node_budget * cfg.depth;
        let mut weights: Vec<f64> = frontier
            .iter()
            .map(|&f| self.train_adj.degree(f) as f64)
            .collect();
        let mut total: f64 = weights.iter().sum();
        for _ in 0..steps {
            if total <= 0.0 {
                break;
            }
            let mut r = rng.random::<f64>() * total;
            let mut slot = frontier.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if r < w {
                    slot = i;
                    break;
                }
                r -= w;
            }
            if weights[slot] == 0.0 {
                // Rounding at the tail; take the last slot with positive weight.
                slot = weights.iter().rposition(|&w| w > 0.0).expect("total > 0");
            }
            let next = *self.train_adj.neighbors(frontier[slot]).choose(rng).expect("degree > 0");
            frontier[slot] = next;
            hit[next] = true;
            weights[slot] = self.train_adj.degree(next) as f64;
            total = weights.iter().sum();
        }
    }
}

/// One-shot sampling; builds the [`TrainSampler`] state on every call.
pub fn sample<R: Rng + ?Sized>(
    g: &Graph,
    train_nodes: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(TrainSampler::new(g, train_nodes)?.sample(cfg, rng))
}
