use crate::attacks::{dist_attack_exp, iterative_attack, AttackSpec};
use crate::dist::{sample_explicit, InnerConfig, ThreatModel};
use crate::error::{invalid, shape_err, Result};
use crate::grad::Tensor;
use crate::model::GradModel;

/// Mean `ℓ₂` distance over unordered pairs of samples.
pub fn diversity_l2(samples: &[Tensor]) -> Result<f64> {
    if samples.len() < 2 {
        return invalid("diversity needs at least two samples");
    }
    if samples.iter().any(|s| s.len() != samples[0].len()) {
        return shape_err("diversity_l2", "samples differ in size");
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            total += l2(samples[i].data(), samples[j].data());
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// `count` perturbations for the single example `(x, y)` drawn from the distribution the
/// distributional attack fits to it.
pub fn dist_samples(
    model: &dyn GradModel,
    x: &Tensor,
    y: usize,
    tm: &ThreatModel,
    cfg: &InnerConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let x = single(x)?;
    let (params, _) = dist_attack_exp(model, &x, &[y], tm, cfg, seed)?;
    let mut rng = crate::attacks::stream_rng(seed, 1);
    (0..count)
        .map(|_| {
            let (mut d, _) = sample_explicit(&params, tm, &mut rng)?;
            tm.project(&x, &mut d)?;
            Ok(d)
        })
        .collect()
}

/// Endpoints of `count` independently started runs of `spec` on `(x, y)`.
pub fn restart_endpoints(
    model: &dyn GradModel,
    x: &Tensor,
    y: usize,
    tm: &ThreatModel,
    spec: &AttackSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let x = single(x)?;
    let mut one = spec.clone();
    one.restarts = 1;
    (0..count)
        .map(|r| {
            Ok(iterative_attack(model, &x, &[y], tm, &one, seed.wrapping_add(r as u64))?.delta)
        })
        .collect()
}

fn single(x: &Tensor) -> Result<Tensor> {
    if x.rows() != 1 {
        return shape_err("diversity", "expected a single example");
    }
    x.clone().reshape(vec![1, x.cols()])
}
