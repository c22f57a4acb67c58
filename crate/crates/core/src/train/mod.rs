//! Outer minimization loops for standard, adversarial and distributional training.

mod adt_exp;
mod amortized;
mod baseline;
mod log;
mod objective;

pub use log::{RunLog, StepRecord};
pub use objective::{objective_j, objective_j_implicit, trades_objective};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::{
    ExplicitGenerator, ImplicitSampler, InnerConfig, ThreatModel, VariationalPosterior,
};
use crate::error::{Error, Result};
use crate::grad::{Activation, Network, OptimizerConfig, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    AtFgsm,
    AtPgd,
    AdtExp,
    AdtExpAm,
    AdtImpAm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Standard,
        Method::AtFgsm,
        Method::AtPgd,
        Method::AdtExp,
        Method::AdtExpAm,
        Method::AdtImpAm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::AtFgsm => "at_fgsm",
            Method::AtPgd => "at_pgd",
            Method::AdtExp => "adt_exp",
            Method::AdtExpAm => "adt_exp_am",
            Method::AdtImpAm => "adt_imp_am",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainLoss {
    #[default]
    Ce,
    /// `CE(f(x), y) + β·KL(f(x + δ) ‖ f(x))`.
    Trades { beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdTrainConfig {
    #[serde(default = "default_pgd_steps")]
    pub steps: usize,
    /// Step size as a fraction of ε.
    #[serde(default = "default_pgd_fraction")]
    pub step_fraction: f64,
}

fn default_pgd_steps() -> usize {
    7
}
fn default_pgd_fraction() -> f64 {
    0.25
}

impl Default for PgdTrainConfig {
    fn default() -> Self {
        Self {
            steps: default_pgd_steps(),
            step_fraction: default_pgd_fraction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "default_gen_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_gen_opt")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
}

fn default_gen_hidden() -> Vec<usize> {
    vec![32]
}
fn default_gen_opt() -> OptimizerConfig {
    OptimizerConfig::adam(2e-4, 0.5, 0.999)
}
fn default_z_dim() -> usize {
    8
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            hidden: default_gen_hidden(),
            optimizer: default_gen_opt(),
            z_dim: default_z_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    #[serde(default = "default_gen_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_gen_opt")]
    pub optimizer: OptimizerConfig,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            hidden: default_gen_hidden(),
            optimizer: default_gen_opt(),
        }
    }
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    64
}
fn default_hidden() -> Vec<usize> {
    vec![16, 16]
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_classifier_opt() -> OptimizerConfig {
    OptimizerConfig::sgd(0.1, 0.9, 2e-4)
}
fn default_decay_factor() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub method: Method,
    #[serde(default)]
    pub loss: TrainLoss,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Hidden widths of the classifier.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_classifier_opt")]
    pub optimizer: OptimizerConfig,
    /// Multiply the classifier learning rate by `lr_decay_factor` from this epoch on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_epoch: Option<usize>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default)]
    pub pgd: PgdTrainConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub posterior: PosteriorConfig,
}

impl TrainSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            loss: TrainLoss::Ce,
            epochs: default_epochs(),
            batch_size: default_batch(),
            hidden: default_hidden(),
            activation: default_activation(),
            optimizer: default_classifier_opt(),
            lr_decay_epoch: None,
            lr_decay_factor: default_decay_factor(),
            inner: InnerConfig::default(),
            pgd: PgdTrainConfig::default(),
            generator: GeneratorConfig::default(),
            posterior: PosteriorConfig::default(),
        }
    }

    /// Checks every bound; the error names the offending field under `field`.
    pub fn validate(&self, field: &str) -> std::result::Result<(), String> {
        if let TrainLoss::Trades { beta } = self.loss {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(format!("{field}.loss.beta must be positive"));
            }
        }
        if self.epochs == 0 {
            return Err(format!("{field}.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(format!("{field}.batch_size must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(format!("{field}.hidden needs at least one positive width"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(format!("{field}.lr_decay_factor must be positive"));
        }
        self.optimizer.validate(&format!("{field}.optimizer"))?;
        self.inner.validate(&format!("{field}.inner"))?;
        if self.inner.steps == 0 {
            return Err(format!("{field}.inner.steps must be at least 1"));
        }
        if self.pgd.steps == 0 || !(self.pgd.step_fraction > 0.0) {
            return Err(format!(
                "{field}.pgd needs steps >= 1 and a positive step_fraction"
            ));
        }
        if self.generator.z_dim == 0 {
            return Err(format!("{field}.generator.z_dim must be at least 1"));
        }
        self.generator
            .optimizer
            .validate(&format!("{field}.generator.optimizer"))?;
        self.posterior
            .optimizer
            .validate(&format!("{field}.posterior.optimizer"))
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Network,
    pub explicit_generator: Option<ExplicitGenerator>,
    pub implicit_sampler: Option<ImplicitSampler>,
    pub posterior: Option<VariationalPosterior>,
    pub log: RunLog,
}

/// Trains a classifier on `data` with the method named in `spec`.
pub fn train(
    spec: &TrainSpec,
    threat: &ThreatModel,
    data: &Dataset,
    seed: u64,
) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    spec.validate("train").map_err(Error::InvalidArgument)?;
    threat.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![data.dim()];
    dims.extend_from_slice(&spec.hidden);
    dims.push(data.num_classes());
    let model = Network::xavier(&dims, spec.activation, Activation::Identity, &mut rng)?;
    let ctx = Ctx { spec, threat, data };
    match spec.method {
        Method::Standard | Method::AtFgsm | Method::AtPgd => baseline::run(&ctx, model, &mut rng),
        Method::AdtExp => adt_exp::run(&ctx, model, &mut rng),
        Method::AdtExpAm => amortized::run_explicit(&ctx, model, &mut rng),
        Method::AdtImpAm => amortized::run_implicit(&ctx, model, &mut rng),
    }
}

pub(crate) struct Ctx<'a> {
    pub spec: &'a TrainSpec,
    pub threat: &'a ThreatModel,
    pub data: &'a Dataset,
}

impl Ctx<'_> {
    /// Shuffled minibatch index lists for one epoch.
    pub fn batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.shuffle(rng);
        idx.chunks(self.spec.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = self.spec.optimizer.lr();
        match self.spec.lr_decay_epoch {
            Some(e) if epoch >= e => base * self.spec.lr_decay_factor,
            _ => base,
        }
    }
}

/// Appends one step to `log`, summarizing `sigma` when present.
#[allow(clippy::too_many_arguments)]
pub(crate) fn record(
    log: &mut RunLog,
    epoch: usize,
    batch: usize,
    j: f64,
    loss: f64,
    entropy: Option<f64>,
    sigma: Option<&Tensor>,
    started: Instant,
) -> Result<()> {
    if !j.is_finite() || !loss.is_finite() || entropy.is_some_and(|e| !e.is_finite()) {
        return Err(Error::NonFinite("training objective"));
    }
    let (sigma_mean, sigma_min, sigma_max) = match sigma {
        Some(s) if !s.is_empty() => {
            let d = s.data();
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (Some(s.sum() / d.len() as f64), Some(min), Some(max))
        }
        _ => (None, None, None),
    };
    let step = log.next_step();
    log.push(StepRecord {
        step,
        epoch,
        batch,
        j,
        loss,
        entropy,
        sigma_mean,
        sigma_min,
        sigma_max,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Minibatch `(x, y)` for the given rows.
pub(crate) fn gather(data: &Dataset, rows: &[usize]) -> (Tensor, Vec<usize>) {
    let x = data.features().select_rows(rows);
    let y = rows.iter().map(|&i| data.labels()[i]).collect();
    (x, y)
}

/// `k` standard normal draws per entry of an `[n, d]` batch, shape `[k·n, d]`.
pub(crate) fn normal_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("sized")
}
