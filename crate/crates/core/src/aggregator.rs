//! The aggregation server.
//!
//! Embeddings are averaged per node over the pushes of hosts that can see the
//! node; rows pushed for unseen nodes are blank and ignored. The table keeps
//! running sums and counts, which is the matrix-free form of `x̃ = Θ x̂`.
//! Weight matrices are averaged uniformly across hosts every `q` iterations.

use std::io::Write;

use ndarray::Array2;

use crate::error::{FerasError, Result};
use crate::federation::HostView;
use crate::gcn::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    sum: Array2<f64>,
    count: Vec<u32>,
    epoch: u64,
}

impl EmbeddingTable {
    pub fn new(num_nodes: usize, dim: usize) -> Self {
        EmbeddingTable {
            sum: Array2::zeros((num_nodes, dim)),
            count: vec![0; num_nodes],
            epoch: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.ncols()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn count(&self, node: usize) -> u32 {
        self.count[node]
    }

    /// Moves the table to iteration `epoch`, optionally discarding its contents.
    pub fn begin_epoch(&mut self, epoch: u64, clear: bool) {
        self.epoch = epoch;
        if clear {
            self.sum.fill(0.0);
            self.count.fill(0);
        }
    }

    fn check_rows(&self, sg_nodes: &[usize], embeddings: &Array2<f64>, visible: &[bool]) -> Result<()> {
        if embeddings.nrows() != sg_nodes.len() || visible.len() != sg_nodes.len() || embeddings.ncols() != self.dim() {
            return Err(FerasError::Shape(format!(
                "push of {} nodes with embeddings {:?} and {} flags into a {}-wide table",
                sg_nodes.len(),
                embeddings.dim(),
                visible.len(),
                self.dim()
            )));
        }
        if let Some(&bad) = sg_nodes.iter().find(|&&v| v >= self.count.len()) {
            return Err(FerasError::NodeOutOfRange {
                id: bad,
                num_nodes: self.count.len(),
            });
        }
        Ok(())
    }

    /// Adds every visible row to its node's running sum. Invisible rows are
    /// blank vectors and change nothing.
    pub fn push_embeddings(
        &mut self,
        epoch: u64,
        sg_nodes: &[usize],
        embeddings: &Array2<f64>,
        visible: &[bool],
    ) -> Result<()> {
        if epoch != self.epoch {
            return Err(FerasError::LatePush {
                table: self.epoch,
                push: epoch,
            });
        }
        self.check_rows(sg_nodes, embeddings, visible)?;
        for (i, &v) in sg_nodes.iter().enumerate() {
            if visible[i] {
                self.sum.row_mut(v).scaled_add(1.0, &embeddings.row(i));
                self.count[v] += 1;
            }
        }
        Ok(())
    }

    /// Undoes an earlier [`push_embeddings`](Self::push_embeddings) with the
    /// same arguments. A node whose count returns to zero is reset exactly.
    pub fn retract(&mut self, sg_nodes: &[usize], embeddings: &Array2<f64>, visible: &[bool]) -> Result<()> {
        self.check_rows(sg_nodes, embeddings, visible)?;
        for (i, &v) in sg_nodes.iter().enumerate() {
            if !visible[i] {
                continue;
            }
            if self.count[v] == 0 {
                return Err(FerasError::Shape(format!("retracting node {v} that holds no pushes")));
            }
            self.count[v] -= 1;
            if self.count[v] == 0 {
                self.sum.row_mut(v).fill(0.0);
            } else {
                self.sum.row_mut(v).scaled_add(-1.0, &embeddings.row(i));
            }
        }
        Ok(())
    }

    /// Averaged rows for `sg_nodes`; nodes nobody pushed come back as zeros.
    pub fn pull_embeddings(&self, sg_nodes: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((sg_nodes.len(), self.dim()));
        for (i, &v) in sg_nodes.iter().enumerate() {
            let c = self.count[v];
            if c > 0 {
                let mut row = out.row_mut(i);
                row.assign(&self.sum.row(v));
                row /= f64::from(c);
            }
        }
        out
    }

    /// Weight with which a host's own visible push of each node enters the
    /// pulled average: `1/count`, or 0 where the host pushed a blank row.
    pub fn own_coefficients(&self, sg_nodes: &[usize], visible: &[bool]) -> Vec<f64> {
        sg_nodes
            .iter()
            .zip(visible)
            .map(|(&v, &seen)| {
                if seen && self.count[v] > 0 {
                    1.0 / f64::from(self.count[v])
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Debug dump: `node_id,count,e_0,...` for every node with pushes.
    pub fn dump_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (v, &c) in self.count.iter().enumerate() {
            if c == 0 {
                continue;
            }
            write!(out, "{v},{c}")?;
            for x in self.sum.row(v) {
                write!(out, ",{}", x / f64::from(c))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Explicit `Θⁿ` matrices for one iteration.
///
/// Columns index the concatenation of all hosts' node lists. Entry `(i, j)` of
/// host `n`'s matrix is `1/c` when occurrence `j` is node `i` of host `n` and
/// was pushed by a host that can see it, `c` being the number of such visible
/// occurrences of that node.
pub fn build_theta(all_sg_nodes: &[Vec<usize>], views: &[HostView]) -> Result<Vec<Array2<f64>>> {
    if all_sg_nodes.len() != views.len() {
        return Err(FerasError::Shape(format!(
            "{} node lists for {} hosts",
            all_sg_nodes.len(),
            views.len()
        )));
    }
    // Ṽᵗ: concatenated occurrences, None where the pusher cannot see the node.
    let occurrences: Vec<Option<usize>> = all_sg_nodes
        .iter()
        .zip(views)
        .flat_map(|(nodes, view)| nodes.iter().map(move |&v| view.contains(v).then_some(v)))
        .collect();
    let total = occurrences.len();
    let count_of = |v: usize| occurrences.iter().filter(|&&o| o == Some(v)).count();

    Ok(all_sg_nodes
        .iter()
        .map(|nodes| {
            let mut theta = Array2::zeros((nodes.len(), total));
            for (i, &v) in nodes.iter().enumerate() {
                let c = count_of(v);
                if c == 0 {
                    continue;
                }
                for (j, &o) in occurrences.iter().enumerate() {
                    if o == Some(v) {
                        theta[[i, j]] = 1.0 / c as f64;
                    }
                }
            }
            theta
        })
        .collect())
}

/// Latest weight push of every host plus the sharing schedule.
#[derive(Debug, Clone)]
pub struct WeightBuffer {
    q: usize,
    pushes: Vec<Option<ModelParams>>,
    since_merge: usize,
}

impl WeightBuffer {
    pub fn new(n_hosts: usize, q: usize) -> Self {
        assert!(q >= 1, "q must be at least 1");
        WeightBuffer {
            q,
            pushes: vec![None; n_hosts],
            since_merge: 0,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn push(&mut self, host: usize, params: ModelParams) {
        self.pushes[host] = Some(params);
    }

    /// Closes one iteration; returns true when a merge is due.
    pub fn complete_iteration(&mut self) -> bool {
        self.since_merge += 1;
        self.since_merge.is_multiple_of(self.q)
    }

    pub fn pushes(&self) -> impl Iterator<Item = &ModelParams> {
        self.pushes.iter().flatten()
    }

    pub fn n_hosts(&self) -> usize {
        self.pushes.len()
    }

    /// Averages the buffer and empties it.
    pub fn merge(&mut self) -> Result<ModelParams> {
        let avg = average_weights(self)?;
        self.pushes.iter_mut().for_each(|p| *p = None);
        self.since_merge = 0;
        Ok(avg)
    }
}

/// Elementwise mean of every host's pushed weights.
pub fn average_weights(buffer: &WeightBuffer) -> Result<ModelParams> {
    let found = buffer.pushes().count();
    if found != buffer.n_hosts() || found == 0 {
        return Err(FerasError::PushCount {
            expected: buffer.n_hosts(),
            found,
        });
    }
    average_params(buffer.pushes())
}

/// Elementwise mean of a non-empty parameter set.
pub fn average_params<'a>(params: impl IntoIterator<Item = &'a ModelParams>) -> Result<ModelParams> {
    let mut it = params.into_iter();
    let first = it.next().ok_or(FerasError::PushCount { expected: 1, found: 0 })?;
    let mut acc = first.clone();
    let mut n = 1usize;
    for p in it {
        if p.dims() != acc.dims() {
            return Err(FerasError::Shape("weight pushes differ in shape".into()));
        }
        acc.scaled_add(1.0, p);
        n += 1;
    }
    let n = n as f64;
    for m in acc.matrices_mut() {
        m.mapv_inplace(|x| x / n);
    }
    Ok(acc)
}
