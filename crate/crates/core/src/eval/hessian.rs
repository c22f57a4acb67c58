use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::grad::{hvp, Tensor};
use crate::model::{input_gradient, GradModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    /// Magnitude of the dominant eigenvalue.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on the Hessian of the function with gradient `grad`, using central
/// difference Hessian-vector products and a Rayleigh-quotient readout.
///
/// The start vector is a seeded random unit vector. Iteration stops once successive
/// estimates differ by less than `tol`; otherwise the last estimate is returned with
/// `converged = false`.
pub fn power_iteration<F>(
    mut grad: F,
    x: &Tensor,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<EigenEstimate>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if iters == 0 {
        return invalid("power iteration needs at least one iteration");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = loop {
        let data: Vec<f64> = (0..x.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let n = t.norm_l2();
        if n > 1e-8 {
            break t.scale(1.0 / n);
        }
    };
    let mut prev: Option<f64> = None;
    let mut est = 0.0;
    for it in 1..=iters {
        let hv = hvp(&mut grad, x, &v)?;
        est = v.dot(&hv);
        let n = hv.norm_l2();
        if n == 0.0 {
            return Ok(EigenEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        if prev.is_some_and(|p| (est - p).abs() < tol) {
            return Ok(EigenEstimate {
                value: est.abs(),
                iterations: it,
                converged: true,
            });
        }
        prev = Some(est);
        v = hv.scale(1.0 / n);
    }
    Ok(EigenEstimate {
        value: est.abs(),
        iterations: iters,
        converged: false,
    })
}

/// Dominant eigenvalue magnitude of the input Hessian of the cross entropy at `(x, y)`.
pub fn dominant_hessian_eigenvalue(
    model: &dyn GradModel,
    x: &Tensor,
    y: usize,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<EigenEstimate> {
    if x.rows() != 1 {
        return shape_err("dominant_hessian_eigenvalue", "expected a single example");
    }
    let x = x.clone().reshape(vec![1, x.cols()])?;
    power_iteration(
        |p| Ok(input_gradient(model, p, &[y])?.1),
        &x,
        iters,
        tol,
        seed,
    )
}
