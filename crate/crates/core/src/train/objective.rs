use rand::Rng;

use crate::dist::{
    inner_objective_exp, sample_z, ImplicitSampler, TanhGaussianParams, ThreatModel,
    VariationalPosterior,
};
use crate::error::{shape_err, Result};
use crate::grad::{BoundNetwork, Network, Tape, Tensor, Var};
use crate::model::GradModel;
use crate::train::TrainLoss;

/// Monte Carlo estimate of `J = E[L(x + δ)] + λ·E[−log p(δ)]` averaged over examples,
/// with `k` samples per example from the explicit distribution `params`.
#[allow(clippy::too_many_arguments)]
pub fn objective_j<R: Rng + ?Sized>(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    params: &TanhGaussianParams,
    tm: &ThreatModel,
    lambda: f64,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if x.rows() != y.len() {
        return shape_err("objective_j", "row/label count mismatch");
    }
    let tiled: Vec<usize> = (0..k).flat_map(|_| y.iter().copied()).collect();
    let est = inner_objective_exp(
        |tape, xa| {
            let z = model.logits_on_tape(tape, xa)?;
            tape.cross_entropy(z, &tiled)
        },
        x,
        params,
        tm,
        lambda,
        k,
        rng,
    )?;
    Ok(est.j)
}

/// The implicit counterpart of [`objective_j`]: the entropy is replaced by its
/// variational lower bound `E[log q(z | δ)]` (up to a constant), one draw of `z` per row
/// of the tiled batch. `cond` is the `[x, g¹, g²]` conditioning of `x`.
#[allow(clippy::too_many_arguments)]
pub fn objective_j_implicit<R: Rng + ?Sized>(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    sampler: &ImplicitSampler,
    posterior: &VariationalPosterior,
    cond: &Tensor,
    tm: &ThreatModel,
    lambda: f64,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if x.rows() != y.len() || cond.rows() != y.len() {
        return shape_err("objective_j_implicit", "row counts of x, y and cond differ");
    }
    let n = y.len();
    let mut tape = Tape::new();
    let gb = sampler.net.bind(&mut tape);
    let qb = posterior.net.bind(&mut tape);
    let c = tape.constant(cond.clone().reshape(vec![n, cond.cols()])?);
    let c = tape.tile_rows(c, k)?;
    let z = tape.constant(sample_z(k * n, sampler.z_dim, rng));
    let delta = sampler.delta_on_tape(&mut tape, &gb, c, z, tm.epsilon)?;
    let xc = tape.constant(x.clone().reshape(vec![n, x.cols()])?);
    let xt = tape.tile_rows(xc, k)?;
    let xa = perturbed(&mut tape, xt, delta, tm)?;
    let logits = model.logits_on_tape(&mut tape, xa)?;
    let tiled: Vec<usize> = (0..k).flat_map(|_| y.iter().copied()).collect();
    let l = tape.cross_entropy(logits, &tiled)?;
    let lq = posterior.log_q_on_tape(&mut tape, &qb, z, delta, tm.epsilon)?;
    let m = (k * n) as f64;
    Ok(tape.value(l).sum() / m + lambda * tape.value(lq).sum() / m)
}

/// `CE(f(x), y) + β·KL(f(x + δ) ‖ f(x))`, averaged over the batch.
pub fn trades_objective(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    delta: &Tensor,
    beta: f64,
) -> Result<f64> {
    if x.rows() != y.len() || delta.shape() != x.shape() {
        return shape_err("trades_objective", "x, y and delta disagree");
    }
    let nat = model.logits(x)?;
    let adv = model.logits(&x.add(delta)?)?;
    let mut tape = Tape::new();
    let nv = tape.constant(nat.clone().reshape(vec![nat.rows(), nat.cols()])?);
    let av = tape.constant(adv.clone().reshape(vec![adv.rows(), adv.cols()])?);
    let ce = tape.cross_entropy(nv, y)?;
    let kl = tape.kl_div(av, nv)?;
    let n = y.len() as f64;
    Ok(tape.value(ce).sum() / n + beta * tape.value(kl).sum() / n)
}

/// `x + δ` clamped to the pixel box.
pub(crate) fn perturbed(tape: &mut Tape, x: Var, delta: Var, tm: &ThreatModel) -> Result<Var> {
    let xa = tape.add(x, delta)?;
    match tm.pixel_box {
        Some((lo, hi)) => tape.clamp(xa, lo, hi),
        None => Ok(xa),
    }
}

/// Classifier-side loss of a training step.
pub(crate) struct OuterLoss {
    /// Scalar to descend on.
    pub total: Var,
    /// Per-row classification loss on the perturbed rows, `[k·n]`.
    pub rows: Var,
}

/// Records the outer loss for perturbed rows `xa` (`[k·n, d]`, row `s·n + i` belongs to
/// example `i`) against natural inputs `x`.
pub(crate) fn outer_loss(
    tape: &mut Tape,
    clf: &BoundNetwork,
    x: &Tensor,
    xa: Var,
    y: &[usize],
    k: usize,
    loss: TrainLoss,
) -> Result<OuterLoss> {
    let tiled: Vec<usize> = (0..k).flat_map(|_| y.iter().copied()).collect();
    let za = clf.forward(tape, xa)?;
    match loss {
        TrainLoss::Ce => {
            let rows = tape.cross_entropy(za, &tiled)?;
            let total = tape.mean(rows)?;
            Ok(OuterLoss { total, rows })
        }
        TrainLoss::Trades { beta } => {
            let xv = tape.constant(x.clone());
            let zn = clf.forward(tape, xv)?;
            let ce = tape.cross_entropy(zn, y)?;
            let ce = tape.mean(ce)?;
            let zt = tape.tile_rows(zn, k)?;
            let kl = tape.kl_div(za, zt)?;
            let kl = tape.mean(kl)?;
            let rows = tape.cross_entropy(za, &tiled)?;
            let kl = tape.scale(kl, beta)?;
            let total = tape.add(ce, kl)?;
            Ok(OuterLoss { total, rows })
        }
    }
}

/// Per-row inner loss used by the adversary: CE for the plain loss, KL to fixed natural
/// logits under TRADES.
pub(crate) fn inner_rows(
    tape: &mut Tape,
    model: &Network,
    natural: Option<&Tensor>,
    xa: Var,
    tiled: &[usize],
    k: usize,
) -> Result<Var> {
    let z = model.logits_on_tape(tape, xa)?;
    match natural {
        None => tape.cross_entropy(z, tiled),
        Some(nat) => {
            let nv = tape.constant(nat.clone());
            let nt = tape.tile_rows(nv, k)?;
            tape.kl_div(z, nt)
        }
    }
}
