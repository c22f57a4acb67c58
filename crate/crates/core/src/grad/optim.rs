//! SGD with momentum and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::grad::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self::SgdMomentum {
            lr,
            momentum,
            weight_decay,
        }
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self::Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Self::SgdMomentum { lr, .. } | Self::Adam { lr, .. } => *lr,
        }
    }

    pub fn validate(&self, field: &str) -> std::result::Result<(), String> {
        let lr = self.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(format!("{field}.lr must be positive"));
        }
        match self {
            Self::SgdMomentum {
                momentum,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(momentum) {
                    return Err(format!("{field}.momentum must lie in [0, 1)"));
                }
                if *weight_decay < 0.0 {
                    return Err(format!("{field}.weight_decay must be nonnegative"));
                }
            }
            Self::Adam {
                beta1, beta2, eps, ..
            } => {
                if !(0.0..1.0).contains(beta1) || !(0.0..1.0).contains(beta2) {
                    return Err(format!("{field}.beta1/beta2 must lie in [0, 1)"));
                }
                if *eps <= 0.0 {
                    return Err(format!("{field}.eps must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Slots {
    Sgd { velocity: Vec<Tensor> },
    Adam { m: Vec<Tensor>, v: Vec<Tensor> },
}

/// Optimizer hyperparameters plus per-parameter slots shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    config: OptimizerConfig,
    slots: Slots,
    step: u64,
}

impl OptState {
    pub fn new(config: OptimizerConfig, shapes: &[Vec<usize>]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        let slots = match config {
            OptimizerConfig::SgdMomentum { .. } => Slots::Sgd { velocity: zeros() },
            OptimizerConfig::Adam { .. } => Slots::Adam {
                m: zeros(),
                v: zeros(),
            },
        };
        Self {
            config,
            slots,
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match &mut self.config {
            OptimizerConfig::SgdMomentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => {
                *lr = new_lr
            }
        }
    }

    /// Momentum buffers (SGD) or first moments (Adam).
    pub fn first_slots(&self) -> &[Tensor] {
        match &self.slots {
            Slots::Sgd { velocity } => velocity,
            Slots::Adam { m, .. } => m,
        }
    }

    /// Descent step `θ ← θ − update(g)`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self.config {
            OptimizerConfig::SgdMomentum { .. } => sgd_momentum_step(params, grads, self),
            OptimizerConfig::Adam { .. } => adam_step(params, grads, self),
        }
    }

    /// Ascent step: the same update applied to `-g`.
    pub fn ascend(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        let neg: Vec<Tensor> = grads.iter().map(|g| g.scale(-1.0)).collect();
        self.step(params, &neg)
    }

    fn check(&self, params: &[&mut Tensor], grads: &[Tensor], slots: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != slots.len() {
            return shape_err(
                "optimizer",
                format!(
                    "{} params, {} grads, {} slots",
                    params.len(),
                    grads.len(),
                    slots.len()
                ),
            );
        }
        for ((p, g), s) in params.iter().zip(grads).zip(slots) {
            if p.shape() != g.shape() || p.shape() != s.shape() {
                return shape_err(
                    "optimizer",
                    format!(
                        "param {:?}, grad {:?}, slot {:?}",
                        p.shape(),
                        g.shape(),
                        s.shape()
                    ),
                );
            }
            g.ensure_finite("optimizer gradient")?;
        }
        Ok(())
    }
}

/// `v ← μ v + g + wd θ`, `θ ← θ − η v`.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptState,
) -> Result<()> {
    let OptimizerConfig::SgdMomentum {
        lr,
        momentum,
        weight_decay,
    } = state.config
    else {
        return invalid("sgd_momentum_step called with a non-SGD state");
    };
    state.check(params, grads, state.first_slots())?;
    let Slots::Sgd { velocity } = &mut state.slots else {
        unreachable!("slots follow config")
    };
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptState) -> Result<()> {
    let OptimizerConfig::Adam {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config
    else {
        return invalid("adam_step called with a non-Adam state");
    };
    state.check(params, grads, state.first_slots())?;
    if state.step == u64::MAX >> 1 {
        return invalid("Adam step counter overflow");
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    let Slots::Adam { m, v } = &mut state.slots else {
        unreachable!("slots follow config")
    };
    for (((p, g), mi), vi) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        for (((pj, gj), mj), vj) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mi.data_mut())
            .zip(vi.data_mut())
        {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
            let mhat = *mj / c1;
            let vhat = *vj / c2;
            *pj -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
