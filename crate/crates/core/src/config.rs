//! TOML experiment configuration.
//!
//! ```toml
//! variant = "feras"
//! output_dir = "out/run"
//!
//! [dataset.synthetic]
//! blocks = 4
//! nodes_per_block = 125
//! p_in = 0.1
//! p_out = 0.005
//! feature_dim = 8
//! noise = 1.0
//! seed = 7
//!
//! [train]
//! epochs = 200
//! n_hosts = 3
//! pi_private = 0.9
//! q = 10
//! hidden_dims = [64, 64]
//! eta = 0.05
//! lambda = 1e-4
//! loss_kind = "ce_singlelabel"
//! seed = 1
//!
//! [train.sampler]
//! kind = "rw"
//! roots = 25
//! depth = 2
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FerasError, Result};
use crate::federation::PrivateSplit;
use crate::gcn::{Hyper, LossKind};
use crate::sampler::SamplerConfig;
use crate::synth::SyntheticSpec;
use crate::trainer::{Inference, Mode, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Directory in the on-disk dataset format.
    Path(PathBuf),
    /// Generated in memory.
    Synthetic(SyntheticSpec),
}

fn default_epochs() -> usize {
    200
}
fn default_hosts() -> usize {
    3
}
fn default_q() -> usize {
    10
}
fn default_hidden() -> [usize; 2] {
    [64, 64]
}
fn default_eta() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_p() -> usize {
    1
}
fn default_eval_every() -> usize {
    10
}
fn default_sampler() -> SamplerConfig {
    SamplerConfig::rw(25, 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_hosts")]
    pub n_hosts: usize,
    /// Fraction of nodes that are private to a single host.
    #[serde(default)]
    pub pi_private: f64,
    #[serde(default)]
    pub private_split: PrivateSplit,
    /// Optional `visibility.csv` overriding `pi_private`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<PathBuf>,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: [usize; 2],
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Defaults to the task's natural loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_kind: Option<LossKind>,
    #[serde(default)]
    pub freeze_head: bool,
    /// Layer after which embeddings are shared. Only 1 is supported.
    #[serde(default = "default_p")]
    pub p_share_layer: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub barrier: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub inference: Inference,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all train fields have defaults")
    }
}

impl TrainSection {
    pub fn hyper(&self, default_loss: LossKind) -> Hyper {
        Hyper {
            freeze_head: self.freeze_head,
            ..Hyper::new(self.eta, self.lambda, self.loss_kind.unwrap_or(default_loss))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_share_layer != 1 {
            return Err(FerasError::Config(format!(
                "p_share_layer = {} is not supported; embeddings are shared after layer 1",
                self.p_share_layer
            )));
        }
        if self.n_hosts == 0 {
            return Err(FerasError::Config("n_hosts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_private) {
            return Err(FerasError::Config(format!("pi_private must lie in [0, 1], got {}", self.pi_private)));
        }
        self.sampler.validate()
    }
}

/// Axis varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Kappa,
    Q,
    NHosts,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Kappa => "kappa",
            SweepAxis::Q => "q",
            SweepAxis::NHosts => "n_hosts",
        }
    }
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}
fn default_seeds() -> usize {
    3
}
fn default_threshold() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Runs per point use seeds `train.seed .. train.seed + seeds`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Validation F1 that counts as converged for the epochs-to-threshold column.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl SweepSection {
    pub fn new(axis: SweepAxis, values: Vec<f64>) -> Self {
        SweepSection {
            axis,
            values,
            variants: default_variants(),
            seeds: default_seeds(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| FerasError::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FerasError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            FerasError::Config(msg) => FerasError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Path(p) = &mut cfg.dataset {
            resolve(p);
        }
        if let Some(p) = &mut cfg.train.visibility {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }
}
