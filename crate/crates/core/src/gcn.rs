//! Two graph convolutions and a dense head, split after the first convolution.
//!
//! ```text
//! x̂ = ReLU(Ā x w1)                  forward_pre   (pushed to the server)
//! x̃ = server average of x̂           aggregator
//! ŷ = ReLU(Ā x̃ w2) · w_dense         forward_post
//! ```
//!
//! Gradients are exact for the host-local view of the network: rows of `x̃`
//! contributed by other hosts are constants, while the host's own row enters
//! `x̃` with its averaging coefficient and is differentiated through.

use ndarray::{Array2, Zip};
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FerasError, Result};
use crate::graph::{spmm, SparseMatrix, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½‖ŷ − y‖²` per node.
    Squared,
    /// Sigmoid binary cross-entropy summed over classes.
    BceMultilabel,
    /// Softmax cross-entropy against a one-hot row.
    CeSinglelabel,
}

impl LossKind {
    /// Lipschitz constant `c*` of the loss derivative with respect to the logits.
    pub fn derivative_lipschitz(self) -> f64 {
        match self {
            LossKind::Squared => 1.0,
            LossKind::BceMultilabel => 0.25,
            LossKind::CeSinglelabel => 1.0,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Multilabel => LossKind::BceMultilabel,
            Task::Singlelabel => LossKind::CeSinglelabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub eta: f64,
    pub lambda: f64,
    pub loss_kind: LossKind,
    /// Keep `w_dense` fixed: no gradient, no regularization term.
    #[serde(default)]
    pub freeze_head: bool,
}

impl Hyper {
    pub fn new(eta: f64, lambda: f64, loss_kind: LossKind) -> Self {
        Hyper {
            eta,
            lambda,
            loss_kind,
            freeze_head: false,
        }
    }

    pub fn c_star(&self) -> f64 {
        self.loss_kind.derivative_lipschitz()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(FerasError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(FerasError::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Weights of the network. Also used for gradients of the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w_dense: Array2<f64>,
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

impl ModelParams {
    /// Glorot-uniform initialization for input width `m1`, hidden widths
    /// `m2`, `m3` and `classes` outputs.
    pub fn glorot<R: Rng + ?Sized>(m1: usize, m2: usize, m3: usize, classes: usize, rng: &mut R) -> Self {
        let w1 = glorot(m1, m2, rng);
        let w2 = glorot(m2, m3, rng);
        let w_dense = glorot(m3, classes, rng);
        ModelParams { w1, w2, w_dense }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            w1: Array2::zeros(self.w1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            w_dense: Array2::zeros(self.w_dense.raw_dim()),
        }
    }

    /// `(m1, m2, m3, classes)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.w1.nrows(),
            self.w1.ncols(),
            self.w2.ncols(),
            self.w_dense.ncols(),
        )
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.w1.ncols() != self.w2.nrows() || self.w2.ncols() != self.w_dense.nrows() {
            return Err(FerasError::Shape(format!(
                "inconsistent weights {:?}, {:?}, {:?}",
                self.w1.dim(),
                self.w2.dim(),
                self.w_dense.dim()
            )));
        }
        Ok(())
    }

    pub fn matrices(&self) -> [&Array2<f64>; 3] {
        [&self.w1, &self.w2, &self.w_dense]
    }

    pub fn matrices_mut(&mut self) -> [&mut Array2<f64>; 3] {
        [&mut self.w1, &mut self.w2, &mut self.w_dense]
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Squared Frobenius norm of `w1`, `w2` and, unless excluded, `w_dense`.
    pub fn sq_norm(&self, include_head: bool) -> f64 {
        let sq = |m: &Array2<f64>| m.iter().map(|x| x * x).sum::<f64>();
        sq(&self.w1) + sq(&self.w2) + if include_head { sq(&self.w_dense) } else { 0.0 }
    }

    /// Frobenius distance over the same matrices as [`ModelParams::sq_norm`].
    pub fn distance(&self, other: &ModelParams, include_head: bool) -> f64 {
        let sq = |a: &Array2<f64>, b: &Array2<f64>| {
            Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y))
        };
        let mut d = sq(&self.w1, &other.w1) + sq(&self.w2, &other.w2);
        if include_head {
            d += sq(&self.w_dense, &other.w_dense);
        }
        d.sqrt()
    }

    /// `self += alpha · other`, matrix by matrix.
    pub fn scaled_add(&mut self, alpha: f64, other: &ModelParams) {
        for (m, o) in self.matrices_mut().into_iter().zip(other.matrices()) {
            m.scaled_add(alpha, o);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.matrices_mut() {
            m.mapv_inplace(|x| x * factor);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Pre,
    Post,
}

/// Activations cached between the forward segments and the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape<'a> {
    norm_adj: &'a SparseMatrix,
    stage: Stage,
    /// `Ā x`
    ax: Array2<f64>,
    z1: Array2<f64>,
    /// `Ā x̃`
    a_shared: Array2<f64>,
    own_coeff: Vec<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
}

impl ForwardTape<'_> {
    pub fn k(&self) -> usize {
        self.ax.nrows()
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// First convolution: `x̂ = ReLU(Ā x w1)`.
pub fn forward_pre<'a>(
    params: &ModelParams,
    norm_adj: &'a SparseMatrix,
    features: &Array2<f64>,
) -> Result<(Array2<f64>, ForwardTape<'a>)> {
    params.check_shapes()?;
    if features.ncols() != params.w1.nrows() || features.nrows() != norm_adj.rows() {
        return Err(FerasError::Shape(format!(
            "forward_pre: features {:?}, adjacency {}x{}, w1 {:?}",
            features.dim(),
            norm_adj.rows(),
            norm_adj.cols(),
            params.w1.dim()
        )));
    }
    let ax = spmm(norm_adj, features.view())?;
    let z1 = ax.dot(&params.w1);
    let h1 = relu(&z1);
    if h1.iter().any(|v| !v.is_finite()) {
        return Err(FerasError::NonFinite("first-layer embeddings"));
    }
    let k = features.nrows();
    Ok((
        h1,
        ForwardTape {
            norm_adj,
            stage: Stage::Pre,
            ax,
            z1,
            a_shared: Array2::zeros((0, 0)),
            own_coeff: vec![0.0; k],
            z2: Array2::zeros((0, 0)),
            h2: Array2::zeros((0, 0)),
        },
    ))
}

/// Second convolution and dense head on the server-returned embeddings.
///
/// `own_coeff[i]` is the weight with which this host's own first-layer
/// output for row `i` entered `shared` (1 when nothing was exchanged).
pub fn forward_post(
    params: &ModelParams,
    shared: &Array2<f64>,
    own_coeff: &[f64],
    tape: &mut ForwardTape<'_>,
) -> Result<Array2<f64>> {
    if tape.stage != Stage::Pre {
        return Err(FerasError::StaleTape);
    }
    let k = tape.k();
    if shared.nrows() != k || shared.ncols() != params.w2.nrows() || own_coeff.len() != k {
        return Err(FerasError::Shape(format!(
            "forward_post: shared {:?}, {} coefficients, {k} nodes, w2 {:?}",
            shared.dim(),
            own_coeff.len(),
            params.w2.dim()
        )));
    }
    let a_shared = spmm(tape.norm_adj, shared.view())?;
    let z2 = a_shared.dot(&params.w2);
    let h2 = relu(&z2);
    let logits = h2.dot(&params.w_dense);
    tape.a_shared = a_shared;
    tape.own_coeff = own_coeff.to_vec();
    tape.z2 = z2;
    tape.h2 = h2;
    tape.stage = Stage::Post;
    Ok(logits)
}

fn check_batch(logits: &Array2<f64>, labels: &Array2<f64>, visible: &[bool]) -> Result<usize> {
    if logits.dim() != labels.dim() || visible.len() != logits.nrows() {
        return Err(FerasError::Shape(format!(
            "logits {:?}, labels {:?}, mask of {}",
            logits.dim(),
            labels.dim(),
            visible.len()
        )));
    }
    match visible.iter().filter(|&&b| b).count() {
        0 => Err(FerasError::AllMasked),
        n => Ok(n),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = row.clone().fold(f64::NEG_INFINITY, f64::max);
    m + row.map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Mean per-node loss over visible rows, without regularization.
pub fn data_loss(
    logits: &Array2<f64>,
    labels: &Array2<f64>,
    visible: &[bool],
    kind: LossKind,
) -> Result<f64> {
    let n = check_batch(logits, labels, visible)?;
    let mut total = 0.0;
    for ((z, y), _) in logits
        .rows()
        .into_iter()
        .zip(labels.rows())
        .zip(visible)
        .filter(|(_, &v)| v)
    {
        total += match kind {
            LossKind::Squared => 0.5 * Zip::from(&z).and(&y).fold(0.0, |a, z, y| a + (z - y) * (z - y)),
            LossKind::BceMultilabel => Zip::from(&z)
                .and(&y)
                .fold(0.0, |a, &z, &y| a + z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()),
            LossKind::CeSinglelabel => {
                log_sum_exp(z.iter().copied()) - Zip::from(&z).and(&y).fold(0.0, |a, z, y| a + z * y)
            }
        };
    }
    Ok(total / n as f64)
}

fn regularizer(params: &ModelParams, hyper: &Hyper) -> f64 {
    0.5 * hyper.lambda * params.sq_norm(!hyper.freeze_head)
}

/// Regularized cost `λ/2 ‖w‖² + L`.
pub fn loss(
    logits: &Array2<f64>,
    labels: &Array2<f64>,
    visible: &[bool],
    params: &ModelParams,
    hyper: &Hyper,
) -> Result<f64> {
    Ok(data_loss(logits, labels, visible, hyper.loss_kind)? + regularizer(params, hyper))
}

/// Derivative of the mean data loss with respect to the logits.
fn loss_gradient(logits: &Array2<f64>, labels: &Array2<f64>, visible: &[bool], kind: LossKind) -> Result<Array2<f64>> {
    let n = check_batch(logits, labels, visible)? as f64;
    let mut g = Array2::zeros(logits.raw_dim());
    for (i, &seen) in visible.iter().enumerate() {
        if !seen {
            continue;
        }
        let z = logits.row(i);
        let y = labels.row(i);
        let mut out = g.row_mut(i);
        match kind {
            LossKind::Squared => Zip::from(&mut out).and(&z).and(&y).for_each(|o, z, y| *o = (z - y) / n),
            LossKind::BceMultilabel => {
                Zip::from(&mut out).and(&z).and(&y).for_each(|o, &z, y| *o = (sigmoid(z) - y) / n)
            }
            LossKind::CeSinglelabel => {
                let lse = log_sum_exp(z.iter().copied());
                Zip::from(&mut out).and(&z).and(&y).for_each(|o, &z, y| *o = ((z - lse).exp() - y) / n)
            }
        }
    }
    Ok(g)
}

/// Exact gradient of [`loss`] with respect to every weight matrix.
pub fn backward(
    tape: ForwardTape<'_>,
    logits: &Array2<f64>,
    labels: &Array2<f64>,
    visible: &[bool],
    params: &ModelParams,
    hyper: &Hyper,
) -> Result<ModelParams> {
    if tape.stage != Stage::Post {
        return Err(FerasError::StaleTape);
    }
    let g_logits = loss_gradient(logits, labels, visible, hyper.loss_kind)?;

    let g_dense = if hyper.freeze_head {
        Array2::zeros(params.w_dense.raw_dim())
    } else {
        tape.h2.t().dot(&g_logits) + hyper.lambda * &params.w_dense
    };

    let mut g_z2 = g_logits.dot(&params.w_dense.t());
    Zip::from(&mut g_z2).and(&tape.z2).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    let g_w2 = tape.a_shared.t().dot(&g_z2) + hyper.lambda * &params.w2;

    // Ā is symmetric, so Āᵀ G = Ā G.
    let mut g_z1 = spmm(tape.norm_adj, g_z2.dot(&params.w2.t()).view())?;
    for (mut row, &c) in g_z1.rows_mut().into_iter().zip(&tape.own_coeff) {
        row *= c;
    }
    Zip::from(&mut g_z1).and(&tape.z1).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    let g_w1 = tape.ax.t().dot(&g_z1) + hyper.lambda * &params.w1;

    Ok(ModelParams {
        w1: g_w1,
        w2: g_w2,
        w_dense: g_dense,
    })
}

/// `w ← w − η·∇`.
pub fn sgd_step(params: &ModelParams, grads: &ModelParams, eta: f64) -> Result<ModelParams> {
    if !grads.is_finite() {
        return Err(FerasError::NonFinite("gradients"));
    }
    let mut next = params.clone();
    next.scaled_add(-eta, grads);
    Ok(next)
}

/// Counts of positive decisions over all (node, class) pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn confusion(logits: &Array2<f64>, labels: &Array2<f64>, mask: &[bool], task: Task) -> Confusion {
    let mut c = Confusion::default();
    for ((z, y), _) in logits
        .rows()
        .into_iter()
        .zip(labels.rows())
        .zip(mask)
        .filter(|(_, &m)| m)
    {
        match task {
            Task::Multilabel => {
                for (&z, &y) in z.iter().zip(y.iter()) {
                    match (z > 0.0, y > 0.5) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            Task::Singlelabel => {
                let pred = argmax(z.iter().copied());
                let truth = argmax(y.iter().copied());
                if pred == truth {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                    c.fn_ += 1;
                }
            }
        }
    }
    c
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Micro-averaged F1 over the masked rows.
pub fn f1_micro(logits: &Array2<f64>, labels: &Array2<f64>, mask: &[bool], task: Task) -> f64 {
    confusion(logits, labels, mask, task).f1()
}
