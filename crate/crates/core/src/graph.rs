//! Graph storage, dataset I/O, subgraph induction and adjacency normalization.
//!
//! Graphs are undirected and stored as a symmetric CSR pattern without
//! self-loops. The self-loop of `Ã = A + I` is added exactly once, when a
//! subgraph's adjacency is normalized.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FerasError, Result};

/// Symmetric adjacency pattern in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    /// Builds a symmetric pattern from an edge list. Reversed and repeated
    /// pairs collapse to one undirected edge; self-loops are dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(FerasError::NodeOutOfRange { id, num_nodes });
                }
            }
            if u == v {
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(&list);
            offsets.push(targets.len());
        }
        Ok(Csr { offsets, targets })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Pattern induced on `nodes`, relabelled to positions in that list.
    pub fn induce(&self, nodes: &[usize]) -> Result<Csr> {
        if nodes.is_empty() {
            return Err(FerasError::EmptyNodeList);
        }
        let num_nodes = self.num_nodes();
        let mut local: HashMap<usize, usize> = HashMap::with_capacity(nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            if v >= num_nodes {
                return Err(FerasError::NodeOutOfRange { id: v, num_nodes });
            }
            if local.insert(v, i).is_some() {
                return Err(FerasError::DuplicateNode(v));
            }
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for &v in nodes {
            let start = targets.len();
            targets.extend(self.neighbors(v).iter().filter_map(|u| local.get(u).copied()));
            targets[start..].sort_unstable();
            offsets.push(targets.len());
        }
        Ok(Csr { offsets, targets })
    }

    /// True when a breadth-first search from node 0 reaches every node.
    pub fn is_connected(&self) -> bool {
        let n = self.num_nodes();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == n
    }
}

/// Real sparse matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(FerasError::Shape(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            per_row[r].push((c, v));
        }
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for mut row in per_row {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if indices.len() > *offsets.last().unwrap() && indices.last() == Some(&c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Ok(SparseMatrix {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.offsets[i]..self.offsets[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }
}

/// Sparse-dense product `a · b`.
pub fn spmm(a: &SparseMatrix, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.cols != b.nrows() {
        return Err(FerasError::Shape(format!(
            "spmm: {}x{} times {}x{}",
            a.rows,
            a.cols,
            b.nrows(),
            b.ncols()
        )));
    }
    let mut out = Array2::zeros((a.rows, b.ncols()));
    for i in 0..a.rows {
        let mut out_row = out.row_mut(i);
        for (j, v) in a.row(i) {
            out_row.scaled_add(v, &b.row(j));
        }
    }
    Ok(out)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for a `k`-node pattern.
pub fn normalize_adjacency(edges: &Csr, k: usize) -> SparseMatrix {
    debug_assert_eq!(edges.num_nodes(), k);
    let deg: Vec<f64> = (0..k).map(|i| (edges.degree(i) + 1) as f64).collect();
    let mut offsets = Vec::with_capacity(k + 1);
    let mut indices = Vec::with_capacity(edges.targets.len() + k);
    let mut values = Vec::with_capacity(edges.targets.len() + k);
    offsets.push(0);
    for i in 0..k {
        let neigh = edges.neighbors(i);
        let split = neigh.partition_point(|&j| j < i);
        for &j in neigh[..split].iter() {
            indices.push(j);
            values.push(1.0 / (deg[i] * deg[j]).sqrt());
        }
        indices.push(i);
        values.push(1.0 / deg[i]);
        for &j in neigh[split..].iter() {
            indices.push(j);
            values.push(1.0 / (deg[i] * deg[j]).sqrt());
        }
        offsets.push(indices.len());
    }
    SparseMatrix {
        rows: k,
        cols: k,
        offsets,
        indices,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Multilabel,
    Singlelabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// A node-classification dataset: topology, features, labels and split roles.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Csr,
    features: Array2<f64>,
    labels: Array2<f64>,
    roles: Vec<Role>,
    task: Task,
}

impl Graph {
    pub fn new(
        adjacency: Csr,
        features: Array2<f64>,
        labels: Array2<f64>,
        roles: Vec<Role>,
        task: Task,
    ) -> Result<Self> {
        let n = adjacency.num_nodes();
        if features.nrows() != n || labels.nrows() != n || roles.len() != n {
            return Err(FerasError::Shape(format!(
                "graph has {n} nodes but {} feature rows, {} label rows, {} roles",
                features.nrows(),
                labels.nrows(),
                roles.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(FerasError::NonFinite("features"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(FerasError::Shape("labels must be 0/1 flags".into()));
        }
        if task == Task::Singlelabel {
            if let Some(bad) = labels.rows().into_iter().position(|r| r.sum() != 1.0) {
                return Err(FerasError::Shape(format!(
                    "singlelabel node {bad} does not have exactly one positive label"
                )));
            }
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
            roles,
            task,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.ncols()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Ids of every node with the given role, ascending.
    pub fn nodes_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&v| self.roles[v] == role).collect()
    }
}

/// A sampled subgraph with its locally normalized adjacency.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub local_edges: Csr,
    pub norm_adj: SparseMatrix,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_connected(&self) -> bool {
        self.local_edges.is_connected()
    }
}

/// Subgraph induced on `nodes`; degrees used for normalization are local.
pub fn induce_subgraph(g: &Graph, nodes: &[usize]) -> Result<Subgraph> {
    let local_edges = g.adjacency.induce(nodes)?;
    let norm_adj = normalize_adjacency(&local_edges, nodes.len());
    Ok(Subgraph {
        nodes: nodes.to_vec(),
        local_edges,
        norm_adj,
    })
}

pub fn is_connected(sg: &Subgraph) -> bool {
    sg.is_connected()
}

#[derive(Serialize, Deserialize)]
struct Meta {
    task: Task,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FerasError::io(path, e))
}

fn parse_rows(path: &Path, what: &str) -> Result<Vec<Vec<f64>>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        FerasError::parse(path, i + 1, format!("non-numeric {what} {tok:?}"))
                    })
                })
                .collect()
        })
        .collect()
}

fn rows_to_matrix(path: &Path, rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(FerasError::parse(
            path,
            bad + 1,
            format!("expected {ncols} columns, found {}", rows[bad].len()),
        ));
    }
    let nrows = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((nrows, ncols), flat).expect("row lengths checked"))
}

/// Loads a dataset directory (`edges.txt`, `features.csv`, `labels.csv`,
/// `roles.csv`, `meta.json`).
pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| FerasError::parse(&meta_path, e.line(), e.to_string()))?;

    let feat_path = dir.join("features.csv");
    let features = rows_to_matrix(&feat_path, parse_rows(&feat_path, "feature")?)?;
    let num_nodes = features.nrows();

    let label_path = dir.join("labels.csv");
    let labels = rows_to_matrix(&label_path, parse_rows(&label_path, "label")?)?;
    if labels.nrows() != num_nodes {
        return Err(FerasError::parse(
            &label_path,
            labels.nrows(),
            format!("expected {num_nodes} label rows"),
        ));
    }
    for (i, row) in labels.rows().into_iter().enumerate() {
        if row.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(FerasError::parse(&label_path, i + 1, "labels must be 0 or 1"));
        }
        if meta.task == Task::Singlelabel && row.sum() != 1.0 {
            return Err(FerasError::parse(
                &label_path,
                i + 1,
                "singlelabel row must have exactly one positive label",
            ));
        }
    }

    let roles_path = dir.join("roles.csv");
    let roles = read(&roles_path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<Role>().map_err(|m| FerasError::parse(&roles_path, i + 1, m)))
        .collect::<Result<Vec<_>>>()?;
    if roles.len() != num_nodes {
        return Err(FerasError::parse(
            &roles_path,
            roles.len(),
            format!("expected {num_nodes} roles"),
        ));
    }

    let edges_path = dir.join("edges.txt");
    let mut edges = Vec::new();
    for (i, line) in read(&edges_path)?.lines().enumerate() {
        let mut toks = line.split_whitespace();
        let (Some(a), Some(b)) = (toks.next(), toks.next()) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(FerasError::parse(&edges_path, i + 1, "expected \"u v\""));
        };
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| FerasError::parse(&edges_path, i + 1, format!("bad node id {t:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        for id in [u, v] {
            if id >= num_nodes {
                return Err(FerasError::parse(
                    &edges_path,
                    i + 1,
                    format!("node id {id} out of range (graph has {num_nodes} nodes)"),
                ));
            }
        }
        edges.push((u, v));
    }
    let adjacency = Csr::from_edges(num_nodes, edges)?;
    Graph::new(adjacency, features, labels, roles, meta.task)
}

/// Writes `g` in the dataset directory format read by [`load_graph`].
pub fn write_graph(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| FerasError::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| FerasError::io(path, e))
    };

    let mut edges = String::new();
    for (u, v) in g.adjacency.edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    write("edges.txt", edges)?;

    let matrix_csv = |m: &Array2<f64>| {
        let mut out = String::new();
        for row in m.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    };
    write("features.csv", matrix_csv(&g.features))?;
    write("labels.csv", matrix_csv(&g.labels))?;

    let mut roles = String::new();
    for r in &g.roles {
        writeln!(roles, "{r}").unwrap();
    }
    write("roles.csv", roles)?;
    write(
        "meta.json",
        serde_json::to_string(&Meta { task: g.task }).expect("meta serializes"),
    )
}
