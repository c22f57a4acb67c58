use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::grad::{cross_entropy_rows, Tensor};
use crate::model::{input_gradient, GradModel};

/// Cross-entropy over a square grid of offsets `a·d_g + b·d_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSurface {
    /// Offsets along each axis, from `−ε` to `ε`.
    pub axis: Vec<f64>,
    /// `values[i][j]` is the loss at `a = axis[i]`, `b = axis[j]`.
    pub values: Vec<Vec<f64>>,
    pub d_g: Vec<f64>,
    pub d_r: Vec<f64>,
    /// The loss gradient vanished and `d_g` is a random direction.
    pub gradient_fallback: bool,
}

/// Loss surface of `model` around the single example `(x, y)` over `[−ε, ε]²`.
///
/// `d_g` is the unit loss gradient at `x` and `d_r` a seeded random unit direction
/// orthogonalized against it. The surface is not clipped to any pixel box.
pub fn loss_surface_grid(
    model: &dyn GradModel,
    x: &Tensor,
    y: usize,
    epsilon: f64,
    resolution: usize,
    seed: u64,
) -> Result<LossSurface> {
    if resolution < 3 {
        return invalid("loss surface resolution must be at least 3");
    }
    if x.rows() != 1 {
        return shape_err("loss_surface_grid", "expected a single example");
    }
    let d = x.cols();
    if d < 2 {
        return shape_err("loss_surface_grid", "needs at least two input dimensions");
    }
    let x = x.clone().reshape(vec![1, d])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, g) = input_gradient(model, &x, &[y])?;
    let mut d_g = g.data().to_vec();
    let gn = norm(&d_g);
    let fallback = !(gn > 0.0 && gn.is_finite());
    if fallback {
        d_g = unit(random_dir(d, &mut rng));
    } else {
        d_g.iter_mut().for_each(|v| *v /= gn);
    }
    let mut d_r = Vec::new();
    while d_r.is_empty() {
        let mut r = random_dir(d, &mut rng);
        let p: f64 = r.iter().zip(&d_g).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(&d_g).for_each(|(a, b)| *a -= p * b);
        if norm(&r) > 1e-8 {
            d_r = unit(r);
        }
    }

    let axis: Vec<f64> = (0..resolution)
        .map(|i| -epsilon + 2.0 * epsilon * i as f64 / (resolution - 1) as f64)
        .collect();
    // The centre offset is exactly zero for odd resolutions.
    let axis: Vec<f64> = axis
        .iter()
        .enumerate()
        .map(|(i, &v)| if 2 * i + 1 == resolution { 0.0 } else { v })
        .collect();
    let mut pts = Vec::with_capacity(resolution * resolution * d);
    for &a in &axis {
        for &b in &axis {
            pts.extend((0..d).map(|j| x.data()[j] + a * d_g[j] + b * d_r[j]));
        }
    }
    let pts = Tensor::new(vec![resolution * resolution, d], pts)?;
    let ce = cross_entropy_rows(&model.logits(&pts)?, &vec![y; resolution * resolution])?;
    let values = ce.chunks(resolution).map(|c| c.to_vec()).collect();
    Ok(LossSurface {
        axis,
        values,
        d_g,
        d_r,
        gradient_fallback: fallback,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|a| *a /= n);
    v
}

fn random_dir(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if norm(&v) > 1e-8 {
            return v;
        }
    }
}
