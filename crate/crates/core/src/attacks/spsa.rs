//! Gradient-free SPSA attack. Only logit queries are made against the model.

use rand::Rng;

use crate::attacks::{as_matrix, stream_rng, AdvResult, AttackLoss, AttackSpec};
use crate::dist::ThreatModel;
use crate::error::{invalid, shape_err, Result};
use crate::grad::{kl_divergence, softmax_cross_entropy, OptState, OptimizerConfig, Tensor};
use crate::model::QueryModel;

/// SPSA estimate of `∇f(x)` from `batch` Rademacher directions:
/// `ĝ_j = mean_b [f(x + cΔ_b) − f(x − cΔ_b)] / (2c Δ_bj)`.
///
/// `f` receives all `2·batch` query points as one `[2·batch, d]` matrix, the `+` queries
/// first, and returns one value per row.
pub fn spsa_gradient<F, R>(
    mut f: F,
    x: &[f64],
    c: f64,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if batch == 0 || !(c > 0.0) {
        return invalid("spsa needs batch >= 1 and c > 0");
    }
    let d = x.len();
    let signs: Vec<f64> = (0..batch * d)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut q = Vec::with_capacity(2 * batch * d);
    for s in [c, -c] {
        for b in 0..batch {
            q.extend(
                x.iter()
                    .zip(&signs[b * d..(b + 1) * d])
                    .map(|(xi, di)| xi + s * di),
            );
        }
    }
    let vals = f(&Tensor::new(vec![2 * batch, d], q)?)?;
    if vals.len() != 2 * batch {
        return shape_err(
            "spsa_gradient",
            "query function must return one value per row",
        );
    }
    let mut g = vec![0.0; d];
    for b in 0..batch {
        let diff = (vals[b] - vals[batch + b]) / (2.0 * c);
        for (gj, dj) in g.iter_mut().zip(&signs[b * d..(b + 1) * d]) {
            *gj += diff / dj;
        }
    }
    g.iter_mut().for_each(|v| *v /= batch as f64);
    Ok(g)
}

fn query_loss(logits: &Tensor, y: usize, loss: AttackLoss, natural: &[f64]) -> Result<f64> {
    match loss {
        AttackLoss::CrossEntropy => softmax_cross_entropy(logits, y),
        AttackLoss::CwMargin => {
            let z = logits.data();
            let other = (0..z.len())
                .filter(|&j| j != y)
                .map(|j| z[j])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(other - z[y])
        }
        AttackLoss::KlToNatural => kl_divergence(logits, &Tensor::vector(natural)),
    }
}

/// Ascent on SPSA gradient estimates with Adam steps and projection; an example stops as
/// soon as it is misclassified.
pub fn spsa_attack(
    model: &dyn QueryModel,
    x: &Tensor,
    y: &[usize],
    tm: &ThreatModel,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AdvResult> {
    if x.rows() != y.len() {
        return shape_err("spsa_attack", "row/label count mismatch");
    }
    let x = as_matrix(x)?;
    let (n, d) = (x.rows(), x.cols());
    let cfg = &spec.spsa;
    let natural = model.logits(&x)?;
    let mut delta = Tensor::zeros(&[n, d]);
    let mut success = vec![false; n];
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let xi = x.row(i).to_vec();
        let nat = natural.row(i).to_vec();
        let mut di = Tensor::zeros(&[d]);
        let mut opt = OptState::new(OptimizerConfig::adam(cfg.lr, 0.9, 0.999), &[vec![d]]);
        let mut row_loss = Vec::new();
        for it in 0..=cfg.iters {
            let xa: Vec<f64> = xi.iter().zip(di.data()).map(|(a, b)| a + b).collect();
            let z = model.logits(&Tensor::new(vec![1, d], xa.clone())?)?;
            row_loss.push(query_loss(&z, y[i], spec.loss, &nat)?);
            if z.argmax_rows()[0] != y[i] {
                success[i] = true;
                break;
            }
            if it == cfg.iters {
                break;
            }
            let g = spsa_gradient(
                |q| {
                    let zq = model.logits(q)?;
                    (0..q.rows())
                        .map(|r| query_loss(&Tensor::vector(zq.row(r)), y[i], spec.loss, &nat))
                        .collect()
                },
                &xa,
                cfg.perturb_size,
                cfg.batch,
                &mut rng,
            )?;
            opt.ascend(&mut [&mut di], &[Tensor::vector(&g)])?;
            tm.project_row(&xi, di.data_mut());
        }
        delta.row_mut(i).copy_from_slice(di.data());
        for (t, l) in row_loss.into_iter().enumerate() {
            if sums.len() <= t {
                sums.push(0.0);
                counts.push(0);
            }
            sums[t] += l;
            counts[t] += 1;
        }
    }
    // Iteration t averages over the examples still running at t.
    let loss_trace = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    Ok(AdvResult {
        delta,
        success,
        loss_trace,
    })
}
