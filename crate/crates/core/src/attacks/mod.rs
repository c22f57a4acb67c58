//! Attack suite: gradient attacks, query-only SPSA, feature-space attack and the
//! distributional attacks.

mod distributional;
mod feature;
mod gradient;
mod spsa;

pub use distributional::{dist_attack_amortized, dist_attack_exp, AmortizedSource};
pub use feature::feature_attack;
pub use gradient::{fgsm, fgsm_targeted, iterative_attack};
pub use spsa::{spsa_attack, spsa_gradient};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::{InnerConfig, ThreatModel};
use crate::error::{invalid, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::model::GradModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Identity,
    Fgsm,
    Iterative,
    Spsa,
    Feature,
    DistExp,
    DistAmortized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLoss {
    #[default]
    CrossEntropy,
    CwMargin,
    KlToNatural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpsaConfig {
    #[serde(default = "default_spsa_batch")]
    pub batch: usize,
    #[serde(default = "default_perturb")]
    pub perturb_size: f64,
    #[serde(default = "default_spsa_lr")]
    pub lr: f64,
    #[serde(default = "default_spsa_iters")]
    pub iters: usize,
}

fn default_spsa_batch() -> usize {
    128
}
fn default_perturb() -> f64 {
    0.001
}
fn default_spsa_lr() -> f64 {
    0.01
}
fn default_spsa_iters() -> usize {
    100
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            batch: default_spsa_batch(),
            perturb_size: default_perturb(),
            lr: default_spsa_lr(),
            iters: default_spsa_iters(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default = "default_targets")]
    pub num_targets: usize,
    #[serde(default = "default_feature_steps")]
    pub steps: usize,
    /// Absolute step; `None` means `ε/8`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

fn default_targets() -> usize {
    8
}
fn default_feature_steps() -> usize {
    20
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            num_targets: default_targets(),
            steps: default_feature_steps(),
            step_size: None,
        }
    }
}

fn default_dist() -> InnerConfig {
    InnerConfig {
        steps: 20,
        samples: 10,
        ..InnerConfig::default()
    }
}

fn default_steps() -> usize {
    20
}
fn default_restarts() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub name: String,
    pub kind: AttackKind,
    /// Overrides the run's threat-model radius when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `None` means `ε/4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub momentum_decay: f64,
    #[serde(default)]
    pub loss: AttackLoss,
    #[serde(default = "default_true")]
    pub random_start: bool,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub spsa: SpsaConfig,
    #[serde(default)]
    pub feature: FeatureConfig,
    #[serde(default = "default_dist")]
    pub dist: InnerConfig,
}

impl AttackSpec {
    fn base(name: &str, kind: AttackKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            epsilon: None,
            step_size: None,
            steps: default_steps(),
            momentum_decay: 0.0,
            loss: AttackLoss::CrossEntropy,
            random_start: true,
            restarts: 1,
            spsa: SpsaConfig::default(),
            feature: FeatureConfig::default(),
            dist: default_dist(),
        }
    }

    pub fn identity() -> Self {
        Self::base("natural", AttackKind::Identity)
    }

    pub fn fgsm() -> Self {
        Self {
            random_start: false,
            steps: 1,
            ..Self::base("fgsm", AttackKind::Fgsm)
        }
    }

    pub fn pgd(steps: usize) -> Self {
        Self {
            steps,
            ..Self::base(&format!("pgd{steps}"), AttackKind::Iterative)
        }
    }

    pub fn mim(steps: usize) -> Self {
        Self {
            steps,
            momentum_decay: 1.0,
            ..Self::base(&format!("mim{steps}"), AttackKind::Iterative)
        }
    }

    pub fn cw(steps: usize) -> Self {
        Self {
            steps,
            loss: AttackLoss::CwMargin,
            ..Self::base(&format!("cw{steps}"), AttackKind::Iterative)
        }
    }

    pub fn spsa() -> Self {
        Self {
            random_start: false,
            loss: AttackLoss::CwMargin,
            ..Self::base("spsa", AttackKind::Spsa)
        }
    }

    pub fn feature() -> Self {
        Self::base("feature", AttackKind::Feature)
    }

    pub fn dist_exp() -> Self {
        Self::base("dist_exp", AttackKind::DistExp)
    }

    pub fn dist_amortized() -> Self {
        Self::base("dist_amortized", AttackKind::DistAmortized)
    }

    pub fn threat(&self, base: &ThreatModel) -> ThreatModel {
        ThreatModel {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            pixel_box: base.pixel_box,
        }
    }

    pub fn step(&self, epsilon: f64) -> f64 {
        self.step_size.unwrap_or(epsilon / 4.0)
    }

    pub fn validate(&self, field: &str) -> std::result::Result<(), String> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(format!("{field}.epsilon must be positive"));
            }
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(format!("{field}.step_size must be positive"));
            }
        }
        if self.steps == 0 {
            return Err(format!("{field}.steps must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(format!("{field}.restarts must be at least 1"));
        }
        if !(self.momentum_decay >= 0.0) {
            return Err(format!("{field}.momentum_decay must be nonnegative"));
        }
        if self.spsa.batch == 0 || !(self.spsa.perturb_size > 0.0) || !(self.spsa.lr > 0.0) {
            return Err(format!(
                "{field}.spsa needs batch >= 1 and positive perturb_size and lr"
            ));
        }
        if self.feature.num_targets == 0 || self.feature.steps == 0 {
            return Err(format!(
                "{field}.feature needs num_targets >= 1 and steps >= 1"
            ));
        }
        if let Some(s) = self.feature.step_size {
            if !(s > 0.0) {
                return Err(format!("{field}.feature.step_size must be positive"));
            }
        }
        if self.dist.steps == 0 {
            return Err(format!("{field}.dist.steps must be at least 1"));
        }
        self.dist.validate(&format!("{field}.dist"))
    }
}

/// Perturbations for a batch, with per-example success flags.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvResult {
    pub delta: Tensor,
    /// Example misclassified at `x + delta`.
    pub success: Vec<bool>,
    /// Batch-mean attack loss after each iterate (attack-specific granularity).
    pub loss_trace: Vec<f64>,
}

impl AdvResult {
    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

/// A perturbation strategy that can be evaluated against a differentiable model.
pub trait Attack {
    fn name(&self) -> &str;
    fn perturb(
        &self,
        model: &dyn GradModel,
        x: &Tensor,
        y: &[usize],
        seed: u64,
    ) -> Result<AdvResult>;
}

/// An [`AttackSpec`] bound to a threat model and the extra inputs some kinds need.
pub struct ConfiguredAttack {
    pub spec: AttackSpec,
    pub threat: ThreatModel,
    /// Target pool for the feature attack.
    pub pool: Option<Dataset>,
    /// Trained generator for the amortized distributional attack.
    pub source: Option<AmortizedSource>,
}

impl ConfiguredAttack {
    pub fn new(spec: AttackSpec, base: &ThreatModel) -> Self {
        let threat = spec.threat(base);
        Self {
            spec,
            threat,
            pool: None,
            source: None,
        }
    }
}

impl Attack for ConfiguredAttack {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn perturb(
        &self,
        model: &dyn GradModel,
        x: &Tensor,
        y: &[usize],
        seed: u64,
    ) -> Result<AdvResult> {
        let tm = &self.threat;
        match self.spec.kind {
            AttackKind::Identity => identity(model, x, y),
            AttackKind::Fgsm => fgsm(model, x, y, tm),
            AttackKind::Iterative => iterative_attack(model, x, y, tm, &self.spec, seed),
            AttackKind::Spsa => spsa_attack(model, x, y, tm, &self.spec, seed),
            AttackKind::Feature => match &self.pool {
                Some(pool) => feature_attack(model, x, y, pool, tm, &self.spec, seed),
                None => invalid("feature attack needs a target pool"),
            },
            AttackKind::DistExp => {
                dist_attack_exp(model, x, y, tm, &self.spec.dist, seed).map(|(_, r)| r)
            }
            AttackKind::DistAmortized => match &self.source {
                Some(src) => dist_attack_amortized(src, model, x, y, tm, seed),
                None => Err(crate::error::Error::UntrainedGenerator),
            },
        }
    }
}

/// The null perturbation.
pub fn identity(model: &dyn GradModel, x: &Tensor, y: &[usize]) -> Result<AdvResult> {
    let delta = Tensor::zeros(&[x.rows(), x.cols()]);
    let success = misclassified(model, &x.clone().reshape(delta.shape().to_vec())?, y)?;
    Ok(AdvResult {
        delta,
        success,
        loss_trace: Vec::new(),
    })
}

pub(crate) fn misclassified(
    model: &dyn crate::model::QueryModel,
    xa: &Tensor,
    y: &[usize],
) -> Result<Vec<bool>> {
    Ok(model
        .predict(xa)?
        .iter()
        .zip(y)
        .map(|(p, t)| p != t)
        .collect())
}

/// Per-row attack loss of `model` at the recorded input `xa`.
pub(crate) fn loss_on_tape(
    tape: &mut Tape,
    model: &dyn GradModel,
    xa: Var,
    y: &[usize],
    loss: AttackLoss,
    natural: Option<&Tensor>,
) -> Result<Var> {
    let z = model.logits_on_tape(tape, xa)?;
    match loss {
        AttackLoss::CrossEntropy => tape.cross_entropy(z, y),
        AttackLoss::CwMargin => tape.margin(z, y),
        AttackLoss::KlToNatural => {
            let nat = match natural {
                Some(n) => n.clone(),
                None => return invalid("kl_to_natural needs natural logits"),
            };
            let nv = tape.constant(nat);
            tape.kl_div(z, nv)
        }
    }
}

/// `true` if `(mis, loss)` beats the incumbent: misclassification first, then higher loss.
pub(crate) fn improves(mis: bool, loss: f64, best: Option<(bool, f64)>) -> bool {
    match best {
        None => true,
        Some((bm, bl)) => (mis && !bm) || (mis == bm && loss > bl),
    }
}

/// Independent deterministic stream `stream` under `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn as_matrix(x: &Tensor) -> Result<Tensor> {
    x.clone().reshape(vec![x.rows(), x.cols()])
}
