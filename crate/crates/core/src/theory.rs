//! Linearization of the shared-embedding network and contraction checks.
//!
//! In the regime analysed here the activations act as the identity and the
//! output is `ŷ = Ā x̃ w2`, so a host's output is affine in either weight
//! matrix with the others held fixed:
//!
//! ```text
//! vec(ŷ) = B1 + M1 vec(w1),   M1 = w2ᵀ ⊗ (Ā Θ* Ā x),   B1 = vec(Ā Θ x̂_rest w2)
//! vec(ŷ) =      M2 vec(w2),   M2 = I ⊗ (Ā x̃)
//! ```
//!
//! where `Θ*` is the diagonal block of `Θ` acting on the host's own rows and
//! `x̂_rest` is the concatenated first-layer output with the host's own block
//! zeroed. One SGD step contracts with constant `1 − ηλ/2` when
//! `ρ(M1ᵀM1) ≤ λ/(2c*)` and `η ≤ 4/(2c*ρ(M2ᵀM2) + 3λ)`.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{average_params, build_theta};
use crate::error::{FerasError, Result};
use crate::federation::FederationPlan;
use crate::gcn::{self, Hyper, LossKind, ModelParams};
use crate::graph::{spmm, Graph, Subgraph};
use crate::trainer::{prepare_batch, run_round, EmbeddingExchange, HostBatch, Variant};

/// Largest row or column count of a dense linearization matrix.
pub const SIZE_LIMIT: usize = 2000;

const POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-12;

/// Column-major vectorization.
pub fn vec(a: &ArrayView2<'_, f64>) -> Array1<f64> {
    a.t().iter().copied().collect()
}

/// Inverse of [`vec`].
pub fn unvec(v: &Array1<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| v[j * rows + i])
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x != 0.0 {
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&(b.to_owned() * x));
        }
    }
    out
}

fn guard(rows: usize, cols: usize) -> Result<()> {
    if rows > SIZE_LIMIT || cols > SIZE_LIMIT {
        return Err(FerasError::SizeGuard {
            rows,
            cols,
            limit: SIZE_LIMIT,
        });
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from a positive random start.
pub fn spectral_radius(a: &ArrayView2<'_, f64>) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(FerasError::Shape(format!("spectral radius of a {:?} matrix", a.dim())));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let asym = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max((a[[i, j]] - a[[j, i]]).abs()));
    if asym > 1e-10 * scale {
        return Err(FerasError::NotSymmetric(asym));
    }

    let mut r = crate::rng::stream(0x5eed, n as u64);
    let start = Uniform::new(0.5, 1.5).expect("valid range");
    let mut v: Array1<f64> = (0..n).map(|_| start.sample(&mut r)).collect();
    v /= v.dot(&v).sqrt();
    let mut rho = 0.0;
    for _ in 0..POWER_ITERS {
        let w = a.dot(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        let done = (next - rho).abs() <= POWER_TOL * next.abs();
        rho = next;
        if done {
            break;
        }
    }
    Ok(rho.max(0.0))
}

/// `ρ(mᵀm)`, formed on the smaller of the two Gram matrices.
pub fn gram_radius(m: &ArrayView2<'_, f64>) -> Result<f64> {
    let gram = if m.nrows() <= m.ncols() { m.dot(&m.t()) } else { m.t().dot(m) };
    // Symmetrize away rounding so the symmetry check measures the input only.
    let gram = (&gram + &gram.t()) * 0.5;
    spectral_radius(&gram.view())
}

/// Linearization of one host's output around fixed embeddings.
#[derive(Debug, Clone)]
pub struct LinearizationPack {
    /// `w2ᵀ ⊗ M_core`, `(m3·k) × (m1·m2)`.
    pub m1: Array2<f64>,
    /// `I_{m3} ⊗ (Ā x̃)`, `(m3·k) × (m2·m3)`.
    pub m2: Array2<f64>,
    /// `Ā Θ* Ā x`, `k × m1`.
    pub m_core: Array2<f64>,
    /// `Ā Ā x`: the same product without embedding sharing.
    pub m_plain_core: Array2<f64>,
    /// `vec(Ā Θ x̂_rest w2)`.
    pub b1: Array1<f64>,
    /// Diagonal of `Θ*`.
    pub theta_star: Vec<f64>,
    /// `Θ x̂`.
    pub x_tilde: Array2<f64>,
    pub w2: Array2<f64>,
}

/// Builds the linearization for the host whose rows of the concatenated node
/// list start at `offset`.
///
/// `theta` is the host's `k × K` matrix, `x_hat_all` the `K × m2` stacked
/// first-layer outputs of every host and `x` the host's masked features.
pub fn build_linearization(
    sg: &Subgraph,
    theta: &Array2<f64>,
    offset: usize,
    x_hat_all: &Array2<f64>,
    x: &Array2<f64>,
    params: &ModelParams,
) -> Result<LinearizationPack> {
    let k = sg.len();
    let (m1, m2, m3, _) = params.dims();
    if theta.nrows() != k || theta.ncols() != x_hat_all.nrows() || offset + k > theta.ncols() {
        return Err(FerasError::Shape(format!(
            "theta {:?} for {k} nodes at offset {offset}, stacked embeddings {:?}",
            theta.dim(),
            x_hat_all.dim()
        )));
    }
    if x.dim() != (k, m1) || x_hat_all.ncols() != m2 {
        return Err(FerasError::Shape(format!(
            "features {:?} and embeddings {:?} against weights {m1}x{m2}",
            x.dim(),
            x_hat_all.dim()
        )));
    }
    guard(m3 * k, m1 * m2)?;
    guard(m3 * k, m2 * m3)?;

    let a = &sg.norm_adj;
    let own = theta.slice(s![.., offset..offset + k]);
    let theta_star: Vec<f64> = (0..k).map(|i| own[[i, i]]).collect();
    if own.indexed_iter().any(|((i, j), &t)| i != j && t != 0.0) {
        return Err(FerasError::Shape("own block of theta is not diagonal".into()));
    }

    let ax = spmm(a, x.view())?;
    let mut scaled = ax.clone();
    for (mut row, &t) in scaled.rows_mut().into_iter().zip(&theta_star) {
        row *= t;
    }
    let m_core = spmm(a, scaled.view())?;
    let m_plain_core = spmm(a, ax.view())?;

    let x_tilde = theta.dot(x_hat_all);
    let mut rest = x_hat_all.clone();
    rest.slice_mut(s![offset..offset + k, ..]).fill(0.0);
    let b1 = vec(&spmm(a, theta.dot(&rest).view())?.dot(&params.w2).view());

    let m1_mat = kron(&params.w2.t(), &m_core.view());
    let a_tilde = spmm(a, x_tilde.view())?;
    let m2_mat = kron(&Array2::eye(m3).view(), &a_tilde.view());

    Ok(LinearizationPack {
        m1: m1_mat,
        m2: m2_mat,
        m_core,
        m_plain_core,
        b1,
        theta_star,
        x_tilde,
        w2: params.w2.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `ρ(M1ᵀM1)`.
    pub rho_m1: f64,
    /// `ρ(M2ᵀM2)`.
    pub rho_m2: f64,
    /// `ρ(w2 w2ᵀ)`; `rho_m1` is this times `rho_core`.
    pub rho_w2: f64,
    /// `ρ(M_core M_coreᵀ)`.
    pub rho_core: f64,
    pub lambda: f64,
    pub c_star: f64,
    pub eta: f64,
    pub eta_max: f64,
    pub rho_m1_bound: f64,
    /// `[rho_m1 ≤ rho_m1_bound, eta ≤ eta_max]`.
    pub satisfied: [bool; 2],
    pub contraction_constant: f64,
}

impl ConstraintReport {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.iter().all(|&s| s)
    }
}

pub fn certify(pack: &LinearizationPack, hyper: &Hyper) -> Result<ConstraintReport> {
    let c_star = hyper.c_star();
    let lambda = hyper.lambda;
    let eta = hyper.eta;
    let rho_m1 = gram_radius(&pack.m1.view())?;
    let rho_m2 = gram_radius(&pack.m2.view())?;
    let eta_max = 4.0 / (2.0 * c_star * rho_m2 + 3.0 * lambda);
    let rho_m1_bound = lambda / (2.0 * c_star);
    Ok(ConstraintReport {
        rho_m1,
        rho_m2,
        rho_w2: gram_radius(&pack.w2.view())?,
        rho_core: gram_radius(&pack.m_core.view())?,
        lambda,
        c_star,
        eta,
        eta_max,
        rho_m1_bound,
        satisfied: [rho_m1 <= rho_m1_bound, eta <= eta_max],
        contraction_constant: 1.0 - eta * lambda / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedVsPlain {
    pub rho_shared: f64,
    pub rho_plain: f64,
    /// The subgraph is disconnected, so the ordering is not guaranteed.
    pub disconnected: bool,
}

/// `ρ(M Mᵀ)` with the host's diagonal share `Θ*` against the same quantity
/// with `Θ*` replaced by the identity.
pub fn compare_shared_vs_plain(sg: &Subgraph, theta_star: &[f64], x: &Array2<f64>) -> Result<SharedVsPlain> {
    let k = sg.len();
    if theta_star.len() != k || x.nrows() != k {
        return Err(FerasError::Shape(format!(
            "{} shares and features {:?} for {k} nodes",
            theta_star.len(),
            x.dim()
        )));
    }
    guard(k, x.ncols())?;
    let ax = spmm(&sg.norm_adj, x.view())?;
    let mut scaled = ax.clone();
    for (mut row, &t) in scaled.rows_mut().into_iter().zip(theta_star) {
        row *= t;
    }
    let shared = spmm(&sg.norm_adj, scaled.view())?;
    let plain = spmm(&sg.norm_adj, ax.view())?;
    Ok(SharedVsPlain {
        rho_shared: gram_radius(&shared.view())?,
        rho_plain: gram_radius(&plain.view())?,
        disconnected: !sg.is_connected(),
    })
}

/// A fixed federated problem on which the update map `Φ` is deterministic:
/// every host keeps the same subgraph, rounds are barriered, the dense head is
/// frozen at the identity and the loss is squared error.
#[derive(Debug, Clone)]
pub struct ContractionInstance {
    pub graph: Graph,
    pub plan: FederationPlan,
    pub batches: Vec<HostBatch>,
    pub hyper: Hyper,
    pub hidden: usize,
}

impl ContractionInstance {
    pub fn new(graph: Graph, plan: FederationPlan, nodes: &[Vec<usize>], hyper: Hyper, hidden: usize) -> Result<Self> {
        if hyper.loss_kind != LossKind::Squared || !hyper.freeze_head {
            return Err(FerasError::Config(
                "contraction instances need squared loss and a frozen head".into(),
            ));
        }
        if nodes.len() != plan.n_hosts {
            return Err(FerasError::Config(format!(
                "{} node lists for {} hosts",
                nodes.len(),
                plan.n_hosts
            )));
        }
        let batches = nodes
            .iter()
            .zip(&plan.views)
            .map(|(n, view)| prepare_batch(&graph, view, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(ContractionInstance {
            graph,
            plan,
            batches,
            hyper,
            hidden,
        })
    }

    pub fn n_hosts(&self) -> usize {
        self.batches.len()
    }

    /// Non-negative weights uniform in `[0, scale)` with an identity head.
    pub fn random_point<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> ModelParams {
        let classes = self.graph.num_classes();
        let u = Uniform::new(0.0, scale).expect("valid range");
        let mut draw = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || u.sample(rng));
        ModelParams {
            w1: draw(self.graph.feature_dim(), self.hidden),
            w2: draw(self.hidden, classes),
            w_dense: Array2::eye(classes),
        }
    }

    /// `q` barriered Feras rounds from a common starting point, then the
    /// uniform weight average.
    pub fn step(&self, start: &ModelParams, q: usize) -> Result<ModelParams> {
        let mut params = vec![start.clone(); self.n_hosts()];
        let mut exchange = EmbeddingExchange::new(self.graph.num_nodes(), self.hidden, self.n_hosts());
        for t in 0..q {
            run_round(
                Variant::Feras,
                &self.hyper,
                self.graph.task(),
                &mut params,
                &self.batches,
                &mut exchange,
                t as u64 + 1,
                true,
            )?;
        }
        average_params(&params)
    }

    /// One linearization per host at `params`.
    pub fn linearize(&self, params: &ModelParams) -> Result<Vec<LinearizationPack>> {
        let x_hat: Vec<Array2<f64>> = self
            .batches
            .iter()
            .map(|b| gcn::forward_pre(params, &b.subgraph.norm_adj, &b.inputs.features).map(|(h, _)| h))
            .collect::<Result<_>>()?;
        let views: Vec<ArrayView2<'_, f64>> = x_hat.iter().map(|h| h.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| FerasError::Shape(e.to_string()))?;
        let lists: Vec<Vec<usize>> = self.batches.iter().map(|b| b.nodes().to_vec()).collect();
        let thetas = build_theta(&lists, &self.plan.views)?;
        let mut offset = 0;
        let mut packs = Vec::with_capacity(self.n_hosts());
        for (b, theta) in self.batches.iter().zip(&thetas) {
            packs.push(build_linearization(&b.subgraph, theta, offset, &stacked, &b.inputs.features, params)?);
            offset += b.subgraph.len();
        }
        Ok(packs)
    }

    pub fn certify_at(&self, params: &ModelParams) -> Result<Vec<ConstraintReport>> {
        self.linearize(params)?
            .iter()
            .map(|p| certify(p, &self.hyper))
            .collect()
    }
}

fn require_certified(inst: &ContractionInstance, params: &ModelParams) -> Result<()> {
    for (host, r) in inst.certify_at(params)?.iter().enumerate() {
        if !r.all_satisfied() {
            return Err(FerasError::Uncertified(format!(
                "host {host}: rho_m1 = {:.3e} (bound {:.3e}), eta = {} (max {:.3e})",
                r.rho_m1, r.rho_m1_bound, r.eta, r.eta_max
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    pub max_ratio: f64,
    /// `(1 − ηλ/2)^q`.
    pub bound: f64,
    pub trials: usize,
    /// Pairs with identical start points.
    pub skipped: usize,
}

/// Largest observed `‖Φ(w) − Φ(v)‖ / ‖w − v‖` over random pairs of
/// certified start points, `Φ` being `q` rounds followed by averaging.
pub fn empirical_contraction<R: Rng + ?Sized>(
    inst: &ContractionInstance,
    q: usize,
    trials: usize,
    scale: f64,
    rng: &mut R,
) -> Result<ContractionSummary> {
    let mut max_ratio = 0.0f64;
    let mut skipped = 0;
    for _ in 0..trials {
        let w = inst.random_point(scale, rng);
        let v = inst.random_point(scale, rng);
        contraction_ratio(inst, &w, &v, q)?.map_or_else(|| skipped += 1, |r| max_ratio = max_ratio.max(r));
    }
    Ok(ContractionSummary {
        max_ratio,
        bound: (1.0 - inst.hyper.eta * inst.hyper.lambda / 2.0).powi(q as i32),
        trials,
        skipped,
    })
}

/// Ratio for one pair; `None` when the two points coincide.
pub fn contraction_ratio(inst: &ContractionInstance, w: &ModelParams, v: &ModelParams, q: usize) -> Result<Option<f64>> {
    let d0 = w.distance(v, false);
    if d0 == 0.0 {
        return Ok(None);
    }
    require_certified(inst, w)?;
    require_certified(inst, v)?;
    let d1 = inst.step(w, q)?.distance(&inst.step(v, q)?, false);
    Ok(Some(d1 / d0))
}

/// Iterates `Φ` until successive points differ by at most `tol`.
pub fn fixed_point(inst: &ContractionInstance, start: &ModelParams, tol: f64, max_iters: usize) -> Result<ModelParams> {
    let mut w = start.clone();
    for _ in 0..max_iters {
        let next = inst.step(&w, 1)?;
        let d = next.distance(&w, false);
        w = next;
        if d <= tol {
            return Ok(w);
        }
    }
    Err(FerasError::Config(format!("no fixed point within {max_iters} iterations")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub t: usize,
    pub distance: f64,
    /// `‖w⁰ − w*‖ (1 − ηλ/2)^t`.
    pub bound: f64,
}

/// Distance of the trajectory from `start` to the fixed point `w_star`.
pub fn decay_trajectory(
    inst: &ContractionInstance,
    start: &ModelParams,
    w_star: &ModelParams,
    steps: usize,
) -> Result<Vec<DecayPoint>> {
    let k = start.distance(w_star, false);
    let c = 1.0 - inst.hyper.eta * inst.hyper.lambda / 2.0;
    let mut w = start.clone();
    let mut out = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        if t > 0 {
            w = inst.step(&w, 1)?;
        }
        out.push(DecayPoint {
            t,
            distance: w.distance(w_star, false),
            bound: k * c.powi(t as i32),
        });
    }
    Ok(out)
}
