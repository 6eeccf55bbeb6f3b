//! Node visibility across hosts.
//!
//! A node is either private (visible to exactly one host) or public (visible
//! to every host). Topology is shared by everyone; features and labels of
//! nodes a host cannot see are zeroed before they reach its network.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{FerasError, Result};
use crate::graph::Subgraph;
use crate::rng;

/// The node set `H(n)` one host may read attributes of.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostView {
    pub host_id: usize,
    visible: Vec<bool>,
}

impl HostView {
    pub fn new(host_id: usize, visible: Vec<bool>) -> Self {
        HostView { host_id, visible }
    }

    pub fn contains(&self, node: usize) -> bool {
        self.visible[node]
    }

    pub fn num_visible(&self) -> usize {
        self.visible.iter().filter(|&&b| b).count()
    }

    pub fn num_nodes(&self) -> usize {
        self.visible.len()
    }

    /// Visibility flags of `nodes`, in order.
    pub fn flags(&self, nodes: &[usize]) -> Vec<bool> {
        nodes.iter().map(|&v| self.visible[v]).collect()
    }
}

/// How private nodes are spread over hosts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivateSplit {
    /// Each private node picks its host independently and uniformly.
    #[default]
    Iid,
    /// Private nodes are dealt round-robin over a shuffled order, so host
    /// counts differ by at most one.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationPlan {
    pub n_hosts: usize,
    pub pi_private: f64,
    /// Expected fraction of nodes each host cannot see, `(N-1)/N · π`.
    pub kappa: f64,
    pub views: Vec<HostView>,
    pub seed: u64,
}

impl FederationPlan {
    pub fn num_nodes(&self) -> usize {
        self.views.first().map_or(0, HostView::num_nodes)
    }

    /// Number of hosts that can see `node`.
    pub fn proprietors(&self, node: usize) -> usize {
        self.views.iter().filter(|v| v.contains(node)).count()
    }
}

pub fn kappa(n_hosts: usize, pi_private: f64) -> f64 {
    (n_hosts as f64 - 1.0) / n_hosts as f64 * pi_private
}

/// Marks `round(π · num_nodes)` nodes private and hands each to one host.
pub fn assign_visibility(
    num_nodes: usize,
    n_hosts: usize,
    pi_private: f64,
    seed: u64,
) -> Result<FederationPlan> {
    assign_visibility_with(num_nodes, n_hosts, pi_private, seed, PrivateSplit::Iid)
}

pub fn assign_visibility_with(
    num_nodes: usize,
    n_hosts: usize,
    pi_private: f64,
    seed: u64,
    split: PrivateSplit,
) -> Result<FederationPlan> {
    if n_hosts == 0 {
        return Err(FerasError::Config("n_hosts must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&pi_private) {
        return Err(FerasError::Config(format!(
            "pi_private must lie in [0, 1], got {pi_private}"
        )));
    }
    let mut rng = rng::plan_rng(seed);
    let n_private = (pi_private * num_nodes as f64).round() as usize;
    let private = index::sample(&mut rng, num_nodes, n_private.min(num_nodes));

    let mut visible = vec![vec![true; num_nodes]; n_hosts];
    for (pos, node) in private.into_iter().enumerate() {
        let owner = match split {
            PrivateSplit::Iid => rng.random_range(0..n_hosts),
            PrivateSplit::Exact => pos % n_hosts,
        };
        for (host, flags) in visible.iter_mut().enumerate() {
            flags[node] = host == owner;
        }
    }
    Ok(FederationPlan {
        n_hosts,
        pi_private,
        kappa: kappa(n_hosts, pi_private),
        views: visible
            .into_iter()
            .enumerate()
            .map(|(h, v)| HostView::new(h, v))
            .collect(),
        seed,
    })
}

/// Reads a `visibility.csv` override: one line per node listing the ids of
/// the hosts that can see it.
///
/// Arbitrary non-empty host subsets are accepted. `pi_private` is set to the
/// fraction of single-host nodes and `kappa` to the mean unseen fraction.
pub fn load_visibility(path: impl AsRef<Path>, num_nodes: usize, n_hosts: usize) -> Result<FederationPlan> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FerasError::io(path, e))?;
    let mut visible = vec![vec![false; num_nodes]; n_hosts];
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if lines >= num_nodes {
            return Err(FerasError::parse(path, i + 1, format!("more than {num_nodes} lines")));
        }
        for tok in line.split(',') {
            let host: usize = tok
                .trim()
                .parse()
                .map_err(|_| FerasError::parse(path, i + 1, format!("bad host id {tok:?}")))?;
            if host >= n_hosts {
                return Err(FerasError::parse(path, i + 1, format!("host {host} >= {n_hosts}")));
            }
            visible[host][lines] = true;
        }
        lines += 1;
    }
    if lines != num_nodes {
        return Err(FerasError::parse(path, lines, format!("expected {num_nodes} lines")));
    }
    let views: Vec<HostView> = visible
        .into_iter()
        .enumerate()
        .map(|(h, v)| HostView::new(h, v))
        .collect();
    let single = (0..num_nodes)
        .filter(|&v| views.iter().filter(|h| h.contains(v)).count() == 1)
        .count();
    let unseen: usize = views.iter().map(|h| num_nodes - h.num_visible()).sum();
    let denom = (num_nodes * n_hosts).max(1) as f64;
    Ok(FederationPlan {
        n_hosts,
        pi_private: single as f64 / num_nodes.max(1) as f64,
        kappa: unseen as f64 / denom,
        views,
        seed: 0,
    })
}

/// Host-side inputs for one subgraph after hiding unseen nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInputs {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub visible: Vec<bool>,
}

/// Gathers the subgraph's rows of `features` and `labels`, zeroing rows of
/// nodes outside `view`.
pub fn mask_inputs(
    sg: &Subgraph,
    view: &HostView,
    features: &Array2<f64>,
    labels: &Array2<f64>,
) -> MaskedInputs {
    let k = sg.nodes.len();
    let mut x = Array2::zeros((k, features.ncols()));
    let mut y = Array2::zeros((k, labels.ncols()));
    let mut visible = Vec::with_capacity(k);
    for (i, &v) in sg.nodes.iter().enumerate() {
        let seen = view.contains(v);
        if seen {
            x.row_mut(i).assign(&features.row(v));
            y.row_mut(i).assign(&labels.row(v));
        }
        visible.push(seen);
    }
    MaskedInputs {
        features: x,
        labels: y,
        visible,
    }
}
