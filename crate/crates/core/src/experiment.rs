//! Experiment runners behind the command-line tool: single runs, sweeps and
//! certification reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::aggregator::build_theta;
use crate::config::{DatasetSpec, ExperimentConfig, SweepAxis, SweepSection};
use crate::error::{FerasError, Result};
use crate::federation::{assign_visibility_with, load_visibility, FederationPlan};
use crate::gcn::{self, LossKind};
use crate::graph::{load_graph, Graph, Role};
use crate::synth::generate_synthetic;
use crate::theory::{build_linearization, certify, compare_shared_vs_plain, ConstraintReport, SharedVsPlain};
use crate::trainer::{
    epochs_to_threshold, final_mean, init_params, metrics_csv, prepare_batch, train_variant, MetricsRecord,
    TrainConfig, Variant,
};

/// Process exit code for an error.
pub fn exit_code(err: &FerasError) -> i32 {
    match err {
        FerasError::Config(_) | FerasError::Io { .. } | FerasError::Parse { .. } => 2,
        FerasError::Diverged(_) => 3,
        FerasError::SizeGuard { .. } => 4,
        _ => 1,
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Graph> {
    match spec {
        DatasetSpec::Path(dir) => {
            if !dir.is_dir() {
                return Err(FerasError::Config(format!("dataset directory {} does not exist", dir.display())));
            }
            load_graph(dir)
        }
        DatasetSpec::Synthetic(s) => generate_synthetic(s),
    }
}

pub fn federation_plan(cfg: &ExperimentConfig, g: &Graph) -> Result<FederationPlan> {
    let t = &cfg.train;
    match &t.visibility {
        Some(path) => load_visibility(path, g.num_nodes(), t.n_hosts),
        None => assign_visibility_with(g.num_nodes(), t.n_hosts, t.pi_private, t.seed, t.private_split),
    }
}

pub fn train_config(cfg: &ExperimentConfig, g: &Graph) -> Result<TrainConfig> {
    let t = &cfg.train;
    t.validate()?;
    let tc = TrainConfig {
        epochs: t.epochs,
        n_hosts: t.n_hosts,
        q: t.q,
        sampler: t.sampler.clone(),
        hyper: t.hyper(LossKind::for_task(g.task())),
        hidden_dims: t.hidden_dims,
        plan: federation_plan(cfg, g)?,
        mode: t.mode,
        barrier: t.barrier,
        eval_every: t.eval_every,
        inference: t.inference,
        seed: t.seed,
    };
    tc.validate(g)?;
    Ok(tc)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub final_test_f1: Option<f64>,
    pub final_val_f1: Option<f64>,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| FerasError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| FerasError::io(path, e))
}

/// Trains `cfg.variant` on an already loaded graph.
pub fn run_on(cfg: &ExperimentConfig, g: &Graph) -> Result<(Vec<MetricsRecord>, RunSummary)> {
    let start = Instant::now();
    let tc = train_config(cfg, g)?;
    let out = train_variant(g, &tc, cfg.variant)?;
    let summary = RunSummary {
        variant: cfg.variant,
        final_test_f1: final_mean(&out.records, Role::Test).map(|r| r.f1_micro),
        final_val_f1: final_mean(&out.records, Role::Val).map(|r| r.f1_micro),
        wall_time_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    Ok((out.records, summary))
}

/// Runs one experiment and writes `metrics.csv` and `summary.json` to `out_dir`.
///
/// On divergence the records gathered so far are still written.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let g = load_dataset(&cfg.dataset)?;
    match run_on(cfg, &g) {
        Ok((records, summary)) => {
            write_file(&out_dir.join("metrics.csv"), &metrics_csv(&records))?;
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            write_file(&out_dir.join("summary.json"), &json)?;
            Ok(summary)
        }
        Err(FerasError::Diverged(d)) => {
            write_file(&out_dir.join("metrics.csv"), &metrics_csv(&d.records))?;
            Err(FerasError::Diverged(d))
        }
        Err(e) => Err(e),
    }
}

/// Applies one sweep value to a copy of `cfg`.
pub fn with_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let as_count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(FerasError::Config(format!("{} must be a positive integer, got {v}", axis.as_str())))
        }
    };
    match axis {
        SweepAxis::Kappa => {
            let n = c.train.n_hosts as f64;
            let pi = if value == 0.0 { 0.0 } else { value * n / (n - 1.0) };
            if !(0.0..=1.0).contains(&pi) || !pi.is_finite() {
                return Err(FerasError::Config(format!(
                    "kappa = {value} is unreachable with {} hosts",
                    c.train.n_hosts
                )));
            }
            c.train.pi_private = pi;
            c.train.visibility = None;
        }
        SweepAxis::Q => c.train.q = as_count(value)?,
        SweepAxis::NHosts => c.train.n_hosts = as_count(value)?,
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub value: f64,
    pub variant: Variant,
    pub seed: u64,
    pub final_test_f1: f64,
    pub final_val_f1: f64,
    pub epochs_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub variant: Variant,
    pub runs: usize,
    pub mean_test_f1: f64,
    pub ci95_test_f1: f64,
    /// Over the runs that reached the threshold.
    pub mean_epochs_to_threshold: Option<f64>,
    pub ci95_epochs_to_threshold: Option<f64>,
    pub reached: usize,
}

/// Mean and 95% normal-approximation half-width.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

pub fn aggregate(runs: &[SweepRun]) -> Vec<SweepPoint> {
    let mut keys: Vec<(f64, Variant)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.value, r.variant)) {
            keys.push((r.value, r.variant));
        }
    }
    keys.into_iter()
        .map(|(value, variant)| {
            let group: Vec<&SweepRun> = runs.iter().filter(|r| r.value == value && r.variant == variant).collect();
            let f1: Vec<f64> = group.iter().map(|r| r.final_test_f1).collect();
            let epochs: Vec<f64> = group.iter().filter_map(|r| r.epochs_to_threshold.map(|e| e as f64)).collect();
            let (mean_test_f1, ci95_test_f1) = mean_ci(&f1);
            let (me, ce) = if epochs.is_empty() {
                (None, None)
            } else {
                let (m, c) = mean_ci(&epochs);
                (Some(m), Some(c))
            };
            SweepPoint {
                value,
                variant,
                runs: group.len(),
                mean_test_f1,
                ci95_test_f1,
                mean_epochs_to_threshold: me,
                ci95_epochs_to_threshold: ce,
                reached: epochs.len(),
            }
        })
        .collect()
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn runs_csv(axis: SweepAxis, runs: &[SweepRun]) -> String {
    let mut s = String::from("axis,value,variant,seed,final_test_f1,final_val_f1,epochs_to_threshold\n");
    for r in runs {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            axis.as_str(),
            r.value,
            r.variant,
            r.seed,
            r.final_test_f1,
            r.final_val_f1,
            opt(r.epochs_to_threshold)
        )
        .unwrap();
    }
    s
}

pub fn aggregate_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut s = String::from(
        "axis,value,variant,runs,mean_test_f1,ci95_test_f1,mean_epochs_to_threshold,ci95_epochs_to_threshold,reached\n",
    );
    for p in points {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            axis.as_str(),
            p.value,
            p.variant,
            p.runs,
            p.mean_test_f1,
            p.ci95_test_f1,
            opt(p.mean_epochs_to_threshold),
            opt(p.ci95_epochs_to_threshold),
            p.reached
        )
        .unwrap();
    }
    s
}

fn run_dir(out_dir: &Path, axis: SweepAxis, value: f64, variant: Variant, seed: u64) -> PathBuf {
    out_dir
        .join("runs")
        .join(format!("{}_{value}", axis.as_str()))
        .join(variant.as_str())
        .join(format!("seed_{seed}"))
}

/// One run per value, variant and seed, spread over the available cores.
///
/// Writes each run's `metrics.csv` under `out_dir/runs/`, plus `runs.csv`
/// and `aggregate.csv` in `out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSection, out_dir: &Path) -> Result<Vec<SweepPoint>> {
    if sweep.values.is_empty() || sweep.variants.is_empty() || sweep.seeds == 0 {
        return Err(FerasError::Config("sweep needs at least one value, variant and seed".into()));
    }
    let g = load_dataset(&cfg.dataset)?;
    let mut jobs = Vec::new();
    for &value in &sweep.values {
        let base = with_axis(cfg, sweep.axis, value)?;
        for &variant in &sweep.variants {
            for s in 0..sweep.seeds as u64 {
                let mut c = base.clone();
                c.variant = variant;
                c.train.seed = cfg.train.seed + s;
                jobs.push((value, c));
            }
        }
    }

    let results: Vec<Mutex<Option<Result<SweepRun>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((value, c)) = jobs.get(i) else { break };
                let res = run_on(c, &g).and_then(|(records, summary)| {
                    let dir = run_dir(out_dir, sweep.axis, *value, c.variant, c.train.seed);
                    write_file(&dir.join("metrics.csv"), &metrics_csv(&records))?;
                    Ok(SweepRun {
                        value: *value,
                        variant: c.variant,
                        seed: c.train.seed,
                        final_test_f1: summary.final_test_f1.unwrap_or(f64::NAN),
                        final_val_f1: summary.final_val_f1.unwrap_or(f64::NAN),
                        epochs_to_threshold: epochs_to_threshold(&records, Role::Val, sweep.threshold),
                    })
                });
                *results[i].lock().unwrap() = Some(res);
            });
        }
    });
    let runs = results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;

    let points = aggregate(&runs);
    write_file(&out_dir.join("runs.csv"), &runs_csv(sweep.axis, &runs))?;
    write_file(&out_dir.join("aggregate.csv"), &aggregate_csv(sweep.axis, &points))?;
    Ok(points)
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceInfo {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub n_hosts: usize,
    pub feature_dim: usize,
    pub hidden_dims: [usize; 2],
    pub classes: usize,
    pub loss_kind: LossKind,
    /// Every first- and second-layer pre-activation was non-negative, so the
    /// linearization is exact for the evaluated weights.
    pub linear_regime: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HostCertificate {
    pub host: usize,
    pub report: ConstraintReport,
    pub shared_vs_plain: SharedVsPlain,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyOutput {
    pub instance: InstanceInfo,
    pub hosts: Vec<HostCertificate>,
    pub all_satisfied: bool,
}

/// Linearizes every host on the whole graph at the initial weights and
/// certifies the contraction conditions.
pub fn certify_graph(cfg: &ExperimentConfig, g: &Graph) -> Result<CertifyOutput> {
    let tc = train_config(cfg, g)?;
    let params = init_params(g, &tc);
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let batches = tc
        .plan
        .views
        .iter()
        .map(|view| prepare_batch(g, view, &all))
        .collect::<Result<Vec<_>>>()?;

    let mut linear = true;
    let mut x_hat = Vec::with_capacity(batches.len());
    for b in &batches {
        let (h, mut tape) = gcn::forward_pre(&params, &b.subgraph.norm_adj, &b.inputs.features)?;
        let z1 = crate::graph::spmm(&b.subgraph.norm_adj, b.inputs.features.view())?.dot(&params.w1);
        linear &= z1.iter().all(|&z| z >= 0.0);
        let ones = vec![1.0; b.subgraph.len()];
        gcn::forward_post(&params, &h, &ones, &mut tape)?;
        x_hat.push(h);
    }
    let views: Vec<_> = x_hat.iter().map(|h| h.view()).collect();
    let stacked = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| FerasError::Shape(e.to_string()))?;
    let lists: Vec<Vec<usize>> = batches.iter().map(|b| b.nodes().to_vec()).collect();
    let thetas = build_theta(&lists, &tc.plan.views)?;

    let mut hosts = Vec::with_capacity(batches.len());
    let mut offset = 0;
    for (host, (b, theta)) in batches.iter().zip(&thetas).enumerate() {
        let pack = build_linearization(&b.subgraph, theta, offset, &stacked, &b.inputs.features, &params)?;
        let a_tilde = crate::graph::spmm(&b.subgraph.norm_adj, pack.x_tilde.view())?;
        linear &= a_tilde.dot(&params.w2).iter().all(|&z| z >= 0.0);
        hosts.push(HostCertificate {
            host,
            report: certify(&pack, &tc.hyper)?,
            shared_vs_plain: compare_shared_vs_plain(&b.subgraph, &pack.theta_star, &b.inputs.features)?,
        });
        offset += b.subgraph.len();
    }
    let (_, m2, m3, classes) = params.dims();
    Ok(CertifyOutput {
        instance: InstanceInfo {
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            n_hosts: tc.n_hosts,
            feature_dim: g.feature_dim(),
            hidden_dims: [m2, m3],
            classes,
            loss_kind: tc.hyper.loss_kind,
            linear_regime: linear,
        },
        all_satisfied: hosts.iter().all(|h| h.report.all_satisfied()),
        hosts,
    })
}

/// Writes `certify.json` to `out_dir`.
pub fn certify_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<CertifyOutput> {
    let g = load_dataset(&cfg.dataset)?;
    let out = certify_graph(cfg, &g)?;
    let json = serde_json::to_string_pretty(&out).expect("report serializes");
    write_file(&out_dir.join("certify.json"), &json)?;
    Ok(out)
}
