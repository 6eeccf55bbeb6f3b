//! Federated training loop and evaluation.
//!
//! One epoch is one outer iteration: every host samples a subgraph, runs the
//! first convolution, exchanges embeddings through the aggregation server,
//! finishes the forward pass, and takes one SGD step. Weights are averaged
//! every `q` epochs.
//!
//! Three schedules are available:
//!
//! * sequential (default): hosts run in order `0..N` against a persistent
//!   embedding table. Host `j` pushes and then pulls, so it observes the
//!   current-epoch pushes of hosts `<= j` and the previous-epoch pushes of
//!   hosts `> j`.
//! * sequential with `barrier`: every host pushes before any host pulls; the
//!   table is cleared each epoch. Single-threaded reference for parallel mode.
//! * parallel: one thread per host with a barrier between pushing and pulling
//!   embeddings, and a join before weight averaging.

use std::fmt;
use std::fmt::Write as _;
use std::sync::{Barrier, Mutex};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::aggregator::{EmbeddingTable, WeightBuffer};
use crate::error::{Divergence, FerasError, Result};
use crate::federation::{mask_inputs, FederationPlan, HostView, MaskedInputs};
use crate::gcn::{self, ForwardTape, Hyper, ModelParams};
use crate::graph::{induce_subgraph, Graph, Role, Subgraph, Task};
use crate::rng;
use crate::sampler::{SamplerConfig, TrainSampler};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Shared embeddings and periodic weight averaging.
    #[default]
    Feras,
    /// Hosts train alone: nothing is exchanged.
    Isolated,
    /// Weight averaging only; each host uses its own first-layer output.
    ShareWeightsOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Feras, Variant::Isolated, Variant::ShareWeightsOnly];

    pub fn shares_embeddings(self) -> bool {
        self == Variant::Feras
    }

    pub fn shares_weights(self) -> bool {
        self != Variant::Isolated
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Feras => "feras",
            Variant::Isolated => "isolated",
            Variant::ShareWeightsOnly => "share_weights_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Baselines the federated variant is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Isolated,
    ShareWeightsOnly,
}

impl From<Baseline> for Variant {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Isolated => Variant::Isolated,
            Baseline::ShareWeightsOnly => Variant::ShareWeightsOnly,
        }
    }
}

/// How the second layer gets its input at evaluation time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inference {
    /// Each host uses its own first-layer output.
    Local,
    /// Hosts exchange full-graph embeddings through the server, as in training.
    /// Only meaningful for [`Variant::Feras`]; baselines always infer locally.
    #[default]
    Shared,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub n_hosts: usize,
    pub q: usize,
    pub sampler: SamplerConfig,
    pub hyper: Hyper,
    /// Widths `[m2, m3]` of the two convolutions.
    pub hidden_dims: [usize; 2],
    pub plan: FederationPlan,
    pub mode: Mode,
    /// Sequential mode only: all pushes complete before any pull.
    pub barrier: bool,
    pub eval_every: usize,
    pub inference: Inference,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let bad = |m: String| Err(FerasError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.q == 0 {
            return bad("q must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be positive".into());
        }
        if self.n_hosts != self.plan.n_hosts || self.plan.views.len() != self.n_hosts {
            return bad(format!(
                "n_hosts = {} but the federation plan has {} hosts",
                self.n_hosts, self.plan.n_hosts
            ));
        }
        if self.plan.num_nodes() != g.num_nodes() {
            return bad(format!(
                "federation plan covers {} nodes, graph has {}",
                self.plan.num_nodes(),
                g.num_nodes()
            ));
        }
        self.sampler.validate()?;
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostTag {
    Host(usize),
    Mean,
}

impl fmt::Display for HostTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostTag::Host(h) => write!(f, "{h}"),
            HostTag::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub host: HostTag,
    pub split: Role,
    pub f1_micro: f64,
    pub loss: f64,
}

impl MetricsRecord {
    fn mean_of(records: &[MetricsRecord]) -> Option<MetricsRecord> {
        let first = records.first()?;
        let n = records.len() as f64;
        Some(MetricsRecord {
            epoch: first.epoch,
            host: HostTag::Mean,
            split: first.split,
            f1_micro: records.iter().map(|r| r.f1_micro).sum::<f64>() / n,
            loss: records.iter().map(|r| r.loss).sum::<f64>() / n,
        })
    }
}

pub const METRICS_HEADER: &str = "epoch,host,split,f1_micro,loss";

/// Renders records in the `metrics.csv` format.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.host, r.split, r.f1_micro, r.loss).unwrap();
    }
    out
}

/// The last mean record of `split`, if any.
pub fn final_mean(records: &[MetricsRecord], split: Role) -> Option<&MetricsRecord> {
    records
        .iter()
        .rev()
        .find(|r| r.split == split && r.host == HostTag::Mean)
}

/// First epoch whose mean `split` F1 reaches `threshold`.
pub fn epochs_to_threshold(records: &[MetricsRecord], split: Role, threshold: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.split == split && r.host == HostTag::Mean && r.f1_micro >= threshold)
        .map(|r| r.epoch)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Final weights of every host.
    pub params: Vec<ModelParams>,
    pub records: Vec<MetricsRecord>,
}

/// A host's sampled subgraph together with its masked inputs.
#[derive(Debug, Clone)]
pub struct HostBatch {
    pub subgraph: Subgraph,
    pub inputs: MaskedInputs,
}

impl HostBatch {
    pub fn nodes(&self) -> &[usize] {
        &self.subgraph.nodes
    }
}

pub fn prepare_batch(g: &Graph, view: &HostView, nodes: &[usize]) -> Result<HostBatch> {
    let subgraph = induce_subgraph(g, nodes)?;
    let inputs = mask_inputs(&subgraph, view, g.features(), g.labels());
    Ok(HostBatch { subgraph, inputs })
}

/// Outcome of one host's step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostStep {
    /// Regularized cost at the weights the step started from.
    pub loss: f64,
    /// Training F1 on the batch's visible nodes; `None` when none are visible.
    pub f1: Option<f64>,
}

/// Second half of a host's iteration: forward through the shared embeddings,
/// backpropagate and update `params` in place.
fn host_post(
    params: &mut ModelParams,
    batch: &HostBatch,
    shared: &Array2<f64>,
    own_coeff: &[f64],
    mut tape: ForwardTape<'_>,
    hyper: &Hyper,
    task: Task,
) -> Result<HostStep> {
    let logits = gcn::forward_post(params, shared, own_coeff, &mut tape)?;
    let inputs = &batch.inputs;
    let step = if inputs.visible.iter().any(|&v| v) {
        let loss = gcn::loss(&logits, &inputs.labels, &inputs.visible, params, hyper)?;
        let grads = gcn::backward(tape, &logits, &inputs.labels, &inputs.visible, params, hyper)?;
        let f1 = gcn::f1_micro(&logits, &inputs.labels, &inputs.visible, task);
        (loss, grads, Some(f1))
    } else {
        // No visible labels: only the regularizer acts.
        let mut grads = params.clone();
        if hyper.freeze_head {
            grads.w_dense.fill(0.0);
        }
        grads.scale(hyper.lambda);
        let loss = 0.5 * hyper.lambda * params.sq_norm(!hyper.freeze_head);
        (loss, grads, None)
    };
    *params = gcn::sgd_step(params, &step.1, hyper.eta)?;
    Ok(HostStep {
        loss: step.0,
        f1: step.2,
    })
}

#[derive(Debug, Clone)]
struct Push {
    nodes: Vec<usize>,
    rows: Array2<f64>,
    visible: Vec<bool>,
}

/// Embedding table plus each host's most recent push, so a new push can
/// replace the host's previous one.
#[derive(Debug, Clone)]
pub struct EmbeddingExchange {
    table: EmbeddingTable,
    last: Vec<Option<Push>>,
}

impl EmbeddingExchange {
    pub fn new(num_nodes: usize, dim: usize, n_hosts: usize) -> Self {
        EmbeddingExchange {
            table: EmbeddingTable::new(num_nodes, dim),
            last: vec![None; n_hosts],
        }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn begin_epoch(&mut self, epoch: u64, clear: bool) {
        self.table.begin_epoch(epoch, clear);
        if clear {
            self.last.iter_mut().for_each(|p| *p = None);
        }
    }

    /// Retracts `host`'s previous push, if any, then pushes `rows`.
    pub fn replace(&mut self, host: usize, epoch: u64, nodes: &[usize], rows: &Array2<f64>, visible: &[bool]) -> Result<()> {
        if let Some(prev) = self.last[host].take() {
            self.table.retract(&prev.nodes, &prev.rows, &prev.visible)?;
        }
        self.table.push_embeddings(epoch, nodes, rows, visible)?;
        self.last[host] = Some(Push {
            nodes: nodes.to_vec(),
            rows: rows.clone(),
            visible: visible.to_vec(),
        });
        Ok(())
    }
}

/// Runs one iteration of every host on fixed batches, single-threaded.
///
/// With `barrier` the table is cleared and all hosts push before any pulls;
/// otherwise hosts run in order against the persistent table. Weight
/// averaging is left to the caller.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    variant: Variant,
    hyper: &Hyper,
    task: Task,
    params: &mut [ModelParams],
    batches: &[HostBatch],
    exchange: &mut EmbeddingExchange,
    epoch: u64,
    barrier: bool,
) -> Result<Vec<HostStep>> {
    assert_eq!(params.len(), batches.len());
    if !variant.shares_embeddings() {
        return params
            .iter_mut()
            .zip(batches)
            .map(|(p, b)| {
                let (h, tape) = gcn::forward_pre(p, &b.subgraph.norm_adj, &b.inputs.features)?;
                let ones = vec![1.0; b.subgraph.len()];
                host_post(p, b, &h, &ones, tape, hyper, task)
            })
            .collect();
    }

    exchange.begin_epoch(epoch, barrier);
    if barrier {
        let mut pre = Vec::with_capacity(batches.len());
        for (host, (p, b)) in params.iter().zip(batches).enumerate() {
            let (h, tape) = gcn::forward_pre(p, &b.subgraph.norm_adj, &b.inputs.features)?;
            exchange.replace(host, epoch, b.nodes(), &h, &b.inputs.visible)?;
            pre.push(tape);
        }
        params
            .iter_mut()
            .zip(batches)
            .zip(pre)
            .map(|((p, b), tape)| {
                let shared = exchange.table.pull_embeddings(b.nodes());
                let coeff = exchange.table.own_coefficients(b.nodes(), &b.inputs.visible);
                host_post(p, b, &shared, &coeff, tape, hyper, task)
            })
            .collect()
    } else {
        let mut steps = Vec::with_capacity(batches.len());
        for (host, (p, b)) in params.iter_mut().zip(batches).enumerate() {
            let (h, tape) = gcn::forward_pre(p, &b.subgraph.norm_adj, &b.inputs.features)?;
            exchange.replace(host, epoch, b.nodes(), &h, &b.inputs.visible)?;
            let shared = exchange.table.pull_embeddings(b.nodes());
            let coeff = exchange.table.own_coefficients(b.nodes(), &b.inputs.visible);
            steps.push(host_post(p, b, &shared, &coeff, tape, hyper, task)?);
        }
        Ok(steps)
    }
}

/// One iteration with one thread per host.
#[allow(clippy::too_many_arguments)]
fn run_round_parallel(
    variant: Variant,
    g: &Graph,
    cfg: &TrainConfig,
    sampler: &TrainSampler,
    params: &mut [ModelParams],
    rngs: &mut [rng::Rng],
    table: &mut EmbeddingTable,
    epoch: u64,
) -> Result<Vec<HostStep>> {
    let n = params.len();
    table.begin_epoch(epoch, true);
    let table = Mutex::new(table);
    let barrier = Barrier::new(n);
    let task = g.task();
    let share = variant.shares_embeddings();

    std::thread::scope(|s| {
        let handles: Vec<_> = params
            .iter_mut()
            .zip(rngs.iter_mut())
            .zip(&cfg.plan.views)
            .map(|((p, r), view)| {
                let (table, barrier) = (&table, &barrier);
                s.spawn(move || -> Result<HostStep> {
                    // Every worker must reach the barrier exactly once, even on error.
                    let batch = match prepare_batch(g, view, &sampler.sample(&cfg.sampler, r)) {
                        Ok(b) => b,
                        Err(e) => {
                            barrier.wait();
                            return Err(e);
                        }
                    };
                    let pre = gcn::forward_pre(p, &batch.subgraph.norm_adj, &batch.inputs.features).and_then(|(h, tape)| {
                        if share {
                            table.lock().unwrap().push_embeddings(epoch, batch.nodes(), &h, &batch.inputs.visible)?;
                        }
                        Ok((h, tape))
                    });
                    barrier.wait();
                    let (h, tape) = pre?;
                    let (shared, coeff) = if share {
                        let t = table.lock().unwrap();
                        (
                            t.pull_embeddings(batch.nodes()),
                            t.own_coefficients(batch.nodes(), &batch.inputs.visible),
                        )
                    } else {
                        (h, vec![1.0; batch.subgraph.len()])
                    };
                    host_post(p, &batch, &shared, &coeff, tape, &cfg.hyper, task)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("host worker panicked"))
            .collect()
    })
}

fn guard(epoch: usize, steps: &[HostStep], records: &[MetricsRecord]) -> Result<()> {
    for (host, s) in steps.iter().enumerate() {
        if !s.loss.is_finite() || s.loss > DIVERGENCE_LOSS {
            let mut records = records.to_vec();
            records.push(MetricsRecord {
                epoch,
                host: HostTag::Host(host),
                split: Role::Train,
                f1_micro: s.f1.unwrap_or(0.0),
                loss: s.loss,
            });
            return Err(FerasError::Diverged(Box::new(Divergence {
                epoch,
                host,
                loss: s.loss,
                records,
            })));
        }
    }
    Ok(())
}

fn diverged_from(err: FerasError, epoch: usize, records: &[MetricsRecord]) -> FerasError {
    match err {
        FerasError::NonFinite(_) => FerasError::Diverged(Box::new(Divergence {
            epoch,
            host: 0,
            loss: f64::NAN,
            records: records.to_vec(),
        })),
        other => other,
    }
}

/// Initial weights shared by every host.
pub fn init_params(g: &Graph, cfg: &TrainConfig) -> ModelParams {
    let [m2, m3] = cfg.hidden_dims;
    ModelParams::glorot(g.feature_dim(), m2, m3, g.num_classes(), &mut rng::init_rng(cfg.seed))
}

/// Federated training with shared embeddings.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_variant(g, cfg, Variant::Feras)
}

pub fn train_baseline(g: &Graph, cfg: &TrainConfig, baseline: Baseline) -> Result<TrainOutput> {
    train_variant(g, cfg, baseline.into())
}

pub fn train_variant(g: &Graph, cfg: &TrainConfig, variant: Variant) -> Result<TrainOutput> {
    cfg.validate(g)?;
    let n = cfg.n_hosts;
    let task = g.task();
    let sampler = TrainSampler::new(g, &g.nodes_with_role(Role::Train))?;
    let evaluator = Evaluator::new(g)?;

    let init = init_params(g, cfg);
    let mut params = vec![init; n];
    let mut rngs: Vec<rng::Rng> = (0..n).map(|h| rng::host_rng(cfg.seed, h)).collect();
    let mut exchange = EmbeddingExchange::new(g.num_nodes(), cfg.hidden_dims[0], n);
    let mut buffer = WeightBuffer::new(n, cfg.q);
    let mut records = Vec::new();

    for epoch in 1..=cfg.epochs {
        let steps = match cfg.mode {
            Mode::Sequential => {
                let batches = rngs
                    .iter_mut()
                    .zip(&cfg.plan.views)
                    .map(|(r, view)| prepare_batch(g, view, &sampler.sample(&cfg.sampler, r)))
                    .collect::<Result<Vec<_>>>()?;
                run_round(variant, &cfg.hyper, task, &mut params, &batches, &mut exchange, epoch as u64, cfg.barrier)
            }
            Mode::Parallel => run_round_parallel(
                variant,
                g,
                cfg,
                &sampler,
                &mut params,
                &mut rngs,
                &mut exchange.table,
                epoch as u64,
            ),
        }
        .map_err(|e| diverged_from(e, epoch, &records))?;
        guard(epoch, &steps, &records)?;

        let train: Vec<MetricsRecord> = steps
            .iter()
            .enumerate()
            .filter_map(|(h, s)| {
                s.f1.map(|f1| MetricsRecord {
                    epoch,
                    host: HostTag::Host(h),
                    split: Role::Train,
                    f1_micro: f1,
                    loss: s.loss,
                })
            })
            .collect();
        let mean = MetricsRecord::mean_of(&train);
        records.extend(train);
        records.extend(mean);

        if variant.shares_weights() {
            for (h, p) in params.iter().enumerate() {
                buffer.push(h, p.clone());
            }
            if buffer.complete_iteration() {
                let avg = buffer.merge()?;
                params.iter_mut().for_each(|p| *p = avg.clone());
            }
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let inference = if variant.shares_embeddings() {
                cfg.inference
            } else {
                Inference::Local
            };
            for split in [Role::Val, Role::Test] {
                records.extend(evaluator.evaluate_hosts(&params, &cfg.plan, split, epoch, inference, &cfg.hyper)?);
            }
        }
    }
    Ok(TrainOutput { params, records })
}

/// Full-graph inference with the normalized adjacency cached.
#[derive(Debug, Clone)]
pub struct Evaluator<'g> {
    g: &'g Graph,
    full: Subgraph,
}

impl<'g> Evaluator<'g> {
    pub fn new(g: &'g Graph) -> Result<Self> {
        let all: Vec<usize> = (0..g.num_nodes()).collect();
        Ok(Evaluator {
            g,
            full: induce_subgraph(g, &all)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn score(
        &self,
        logits: &Array2<f64>,
        inputs: &MaskedInputs,
        params: &ModelParams,
        hyper: &Hyper,
        split: Role,
        epoch: usize,
        host: usize,
    ) -> Result<MetricsRecord> {
        let mask: Vec<bool> = inputs
            .visible
            .iter()
            .zip(self.g.roles())
            .map(|(&v, &r)| v && r == split)
            .collect();
        if !mask.iter().any(|&m| m) {
            return Err(FerasError::EmptySplit(split.as_str()));
        }
        Ok(MetricsRecord {
            epoch,
            host: HostTag::Host(host),
            split,
            f1_micro: gcn::f1_micro(logits, &inputs.labels, &mask, self.g.task()),
            loss: gcn::loss(logits, &inputs.labels, &mask, params, hyper)?,
        })
    }

    /// Local inference for one host: the server step is the identity on the
    /// host's own embeddings; only split nodes the host can see are scored.
    pub fn evaluate(&self, params: &ModelParams, view: &HostView, split: Role, hyper: &Hyper) -> Result<MetricsRecord> {
        self.evaluate_at(params, view, split, hyper, 0)
    }

    fn evaluate_at(&self, params: &ModelParams, view: &HostView, split: Role, hyper: &Hyper, epoch: usize) -> Result<MetricsRecord> {
        let inputs = mask_inputs(&self.full, view, self.g.features(), self.g.labels());
        let (h, mut tape) = gcn::forward_pre(params, &self.full.norm_adj, &inputs.features)?;
        let ones = vec![1.0; self.full.len()];
        let logits = gcn::forward_post(params, &h, &ones, &mut tape)?;
        self.score(&logits, &inputs, params, hyper, split, epoch, view.host_id)
    }

    /// Per-host records followed by their mean.
    pub fn evaluate_hosts(
        &self,
        params: &[ModelParams],
        plan: &FederationPlan,
        split: Role,
        epoch: usize,
        inference: Inference,
        hyper: &Hyper,
    ) -> Result<Vec<MetricsRecord>> {
        let mut out = match inference {
            Inference::Local => params
                .iter()
                .zip(&plan.views)
                .map(|(p, view)| self.evaluate_at(p, view, split, hyper, epoch))
                .collect::<Result<Vec<_>>>()?,
            Inference::Shared => {
                let inputs: Vec<MaskedInputs> = plan
                    .views
                    .iter()
                    .map(|view| mask_inputs(&self.full, view, self.g.features(), self.g.labels()))
                    .collect();
                let mut table = EmbeddingTable::new(self.g.num_nodes(), params[0].w1.ncols());
                let mut tapes = Vec::with_capacity(params.len());
                for (p, inp) in params.iter().zip(&inputs) {
                    let (h, tape) = gcn::forward_pre(p, &self.full.norm_adj, &inp.features)?;
                    table.push_embeddings(0, &self.full.nodes, &h, &inp.visible)?;
                    tapes.push(tape);
                }
                let shared = table.pull_embeddings(&self.full.nodes);
                params
                    .iter()
                    .zip(&inputs)
                    .zip(tapes)
                    .enumerate()
                    .map(|(host, ((p, inp), mut tape))| {
                        let coeff = table.own_coefficients(&self.full.nodes, &inp.visible);
                        let logits = gcn::forward_post(p, &shared, &coeff, &mut tape)?;
                        self.score(&logits, inp, p, hyper, split, epoch, host)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        out.extend(MetricsRecord::mean_of(&out));
        Ok(out)
    }
}

/// Local-inference evaluation of one host.
pub fn evaluate(params: &ModelParams, g: &Graph, view: &HostView, split: Role, hyper: &Hyper) -> Result<MetricsRecord> {
    Evaluator::new(g)?.evaluate(params, view, split, hyper)
}
