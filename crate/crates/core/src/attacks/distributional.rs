//! Attacks that sample from a learned adversarial distribution.

use crate::attacks::{as_matrix, improves, stream_rng, AdvResult};
use crate::dist::{
    amortized_explicit_params, conditioning, maximize_explicit, sample_explicit, sample_implicit,
    ExplicitGenerator, ImplicitSampler, InnerConfig, TanhGaussianParams, ThreatModel,
};
use crate::error::{shape_err, Error, Result};
use crate::grad::{cross_entropy_rows, Tensor};
use crate::model::GradModel;

/// Fits a per-example tanh-Gaussian by `cfg.steps` Adam ascent steps on the
/// entropy-regularized objective, then returns the best of `cfg.samples` draws from it.
pub fn dist_attack_exp(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    tm: &ThreatModel,
    cfg: &InnerConfig,
    seed: u64,
) -> Result<(TanhGaussianParams, AdvResult)> {
    if x.rows() != y.len() {
        return shape_err("dist_attack_exp", "row/label count mismatch");
    }
    let x = as_matrix(x)?;
    let (n, d) = (x.rows(), x.cols());
    let k = cfg.samples;
    let tiled: Vec<usize> = (0..k).flat_map(|_| y.iter().copied()).collect();
    let mut params = TanhGaussianParams::init(&[n, d]);
    let mut rng = stream_rng(seed, 0);
    let trace = maximize_explicit(
        |tape, xa| {
            let z = model.logits_on_tape(tape, xa)?;
            tape.cross_entropy(z, &tiled)
        },
        &x,
        &mut params,
        tm,
        cfg,
        &mut rng,
    )?;
    let mut best_delta = Tensor::zeros(&[n, d]);
    let mut best: Vec<Option<(bool, f64)>> = vec![None; n];
    for _ in 0..k {
        let (mut delta, _) = sample_explicit(&params, tm, &mut rng)?;
        tm.project(&x, &mut delta)?;
        let logits = model.logits(&x.add(&delta)?)?;
        let pred = logits.argmax_rows();
        let ce = cross_entropy_rows(&logits, y)?;
        for i in 0..n {
            let mis = pred[i] != y[i];
            if improves(mis, ce[i], best[i]) {
                best[i] = Some((mis, ce[i]));
                best_delta.row_mut(i).copy_from_slice(delta.row(i));
            }
        }
    }
    let result = AdvResult {
        delta: best_delta,
        success: best.iter().map(|b| b.is_some_and(|(m, _)| m)).collect(),
        loss_trace: trace.j,
    };
    Ok((params, result))
}

/// A generator trained against the defended model.
#[derive(Clone, Debug)]
pub enum AmortizedSource {
    Explicit(ExplicitGenerator),
    Implicit(ImplicitSampler),
}

impl AmortizedSource {
    pub fn is_trained(&self) -> bool {
        match self {
            Self::Explicit(g) => g.trained,
            Self::Implicit(s) => s.trained,
        }
    }
}

/// One sample per example from the generator's conditional distribution.
pub fn dist_attack_amortized(
    source: &AmortizedSource,
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    tm: &ThreatModel,
    seed: u64,
) -> Result<AdvResult> {
    if !source.is_trained() {
        return Err(Error::UntrainedGenerator);
    }
    if x.rows() != y.len() {
        return shape_err("dist_attack_amortized", "row/label count mismatch");
    }
    let x = as_matrix(x)?;
    let d = x.cols();
    let cond = conditioning(model, &x, y, tm)?;
    let mut rng = stream_rng(seed, 0);
    let mut delta = match source {
        AmortizedSource::Explicit(g) => {
            let g1 = Tensor::new(
                vec![x.rows(), d],
                (0..x.rows())
                    .flat_map(|i| cond.row(i)[d..2 * d].to_vec())
                    .collect(),
            )?;
            let g2 = Tensor::new(
                vec![x.rows(), d],
                (0..x.rows())
                    .flat_map(|i| cond.row(i)[2 * d..].to_vec())
                    .collect(),
            )?;
            let params = amortized_explicit_params(g, &x, &g1, &g2)?;
            sample_explicit(&params, tm, &mut rng)?.0
        }
        AmortizedSource::Implicit(s) => sample_implicit(s, &cond, tm, &mut rng)?.0,
    };
    tm.project(&x, &mut delta)?;
    let logits = model.logits(&x.add(&delta)?)?;
    let ce = cross_entropy_rows(&logits, y)?;
    let success = logits
        .argmax_rows()
        .iter()
        .zip(y)
        .map(|(p, t)| p != t)
        .collect();
    Ok(AdvResult {
        delta,
        success,
        loss_trace: vec![ce.iter().sum::<f64>() / ce.len() as f64],
    })
}
