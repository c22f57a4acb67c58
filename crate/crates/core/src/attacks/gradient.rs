//! FGSM and the projected iterative family (PGD, MIM, C&W-margin PGD).

use rand::Rng;

use crate::attacks::{
    as_matrix, improves, loss_on_tape, misclassified, stream_rng, AdvResult, AttackLoss, AttackSpec,
};
use crate::dist::{sign, ThreatModel};
use crate::error::{shape_err, Result};
use crate::grad::{Tape, Tensor};
use crate::model::GradModel;

/// Per-row losses, predictions and the input gradient of the summed loss at `xa`.
fn probe(
    model: &dyn GradModel,
    xa: &Tensor,
    y: &[usize],
    loss: AttackLoss,
    natural: Option<&Tensor>,
) -> Result<(Vec<f64>, Vec<usize>, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.input(xa.clone());
    let l = loss_on_tape(&mut tape, model, xv, y, loss, natural)?;
    let total = tape.sum(l)?;
    let losses = tape.value(l).data().to_vec();
    let g = tape.backward(total)?;
    let pred = model.predict(xa)?;
    Ok((losses, pred, g.get(xv)))
}

fn check(x: &Tensor, y: &[usize]) -> Result<Tensor> {
    if x.rows() != y.len() {
        return shape_err(
            "attack",
            format!("{} rows but {} labels", x.rows(), y.len()),
        );
    }
    as_matrix(x)
}

/// `δ = ε·sign(∇ₓ L)`, projected; `sign(0) = 0`.
pub fn fgsm(model: &dyn GradModel, x: &Tensor, y: &[usize], tm: &ThreatModel) -> Result<AdvResult> {
    let x = check(x, y)?;
    let (losses, _, g) = probe(model, &x, y, AttackLoss::CrossEntropy, None)?;
    let mut delta = g.map(|v| tm.epsilon * sign(v));
    tm.project(&x, &mut delta)?;
    let success = misclassified(model, &x.add(&delta)?, y)?;
    Ok(AdvResult {
        delta,
        success,
        loss_trace: vec![losses.iter().sum::<f64>() / losses.len() as f64],
    })
}

/// Targeted FGSM: one signed step that decreases the loss of `target`.
pub fn fgsm_targeted(
    model: &dyn GradModel,
    x: &Tensor,
    target: &[usize],
    tm: &ThreatModel,
) -> Result<Tensor> {
    let x = check(x, target)?;
    let (_, _, g) = probe(model, &x, target, AttackLoss::CrossEntropy, None)?;
    let mut delta = g.map(|v| -tm.epsilon * sign(v));
    tm.project(&x, &mut delta)?;
    Ok(delta)
}

/// Projected signed-gradient ascent with optional momentum and restarts.
///
/// Every iterate, including the start, is scored by `(misclassified, loss)` per example
/// and the best one over all iterates and restarts is returned. Restart `r` draws its
/// start from stream `r` of `seed`, so a run with more steps or restarts sees a superset
/// of the iterates of a shorter one.
pub fn iterative_attack(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    tm: &ThreatModel,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AdvResult> {
    let x = check(x, y)?;
    let (n, d) = (x.rows(), x.cols());
    let alpha = spec.step(tm.epsilon);
    let natural = match spec.loss {
        AttackLoss::KlToNatural => Some(model.logits(&x)?),
        _ => None,
    };
    let mut best_delta = Tensor::zeros(&[n, d]);
    let mut best: Vec<Option<(bool, f64)>> = vec![None; n];
    let mut trace = Vec::with_capacity(spec.restarts * (spec.steps + 1));
    for restart in 0..spec.restarts {
        let mut rng = stream_rng(seed, restart as u64);
        let mut delta = if spec.random_start {
            let data = (0..n * d)
                .map(|_| rng.random_range(-tm.epsilon..=tm.epsilon))
                .collect();
            Tensor::new(vec![n, d], data)?
        } else {
            Tensor::zeros(&[n, d])
        };
        tm.project(&x, &mut delta)?;
        let mut velocity = Tensor::zeros(&[n, d]);
        for t in 0..=spec.steps {
            let xa = x.add(&delta)?;
            let (losses, pred, g) = probe(model, &xa, y, spec.loss, natural.as_ref())?;
            trace.push(losses.iter().sum::<f64>() / n as f64);
            for i in 0..n {
                let mis = pred[i] != y[i];
                if improves(mis, losses[i], best[i]) {
                    best[i] = Some((mis, losses[i]));
                    best_delta.row_mut(i).copy_from_slice(delta.row(i));
                }
            }
            if t == spec.steps {
                break;
            }
            for i in 0..n {
                let gi = g.row(i);
                let vi = velocity.row_mut(i);
                if spec.momentum_decay > 0.0 {
                    let l1: f64 = gi.iter().map(|v| v.abs()).sum();
                    let scale = if l1 > 0.0 { 1.0 / l1 } else { 0.0 };
                    for (v, &gj) in vi.iter_mut().zip(gi) {
                        *v = spec.momentum_decay * *v + gj * scale;
                    }
                } else {
                    vi.copy_from_slice(gi);
                }
                for (dj, &vj) in delta.row_mut(i).iter_mut().zip(vi.iter()) {
                    *dj += alpha * sign(vj);
                }
            }
            tm.project(&x, &mut delta)?;
        }
    }
    let success = best.iter().map(|b| b.is_some_and(|(m, _)| m)).collect();
    Ok(AdvResult {
        delta: best_delta,
        success,
        loss_trace: trace,
    })
}
