use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::grad::Tensor;

const POWER_ITERS: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Coordinates of each centred sample on the two leading components.
    pub coords: Vec<[f64; 2]>,
    /// Sample variance along each component, nonincreasing.
    pub explained_variance: [f64; 2],
    pub components: [Vec<f64>; 2],
}

/// Projects samples onto the top two principal directions of their covariance, found
/// by power iteration with deflation.
pub fn pca_project(samples: &[Tensor]) -> Result<Projection> {
    if samples.len() < 3 {
        return invalid("PCA needs at least three samples");
    }
    let d = samples[0].len();
    if d < 2 {
        return shape_err("pca_project", "samples need at least two dimensions");
    }
    if samples.iter().any(|s| s.len() != d) {
        return shape_err("pca_project", "samples differ in size");
    }
    let n = samples.len();
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut()
            .zip(s.data())
            .for_each(|(m, v)| *m += v / n as f64);
    }
    let centred: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.data().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for c in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j] / (n - 1) as f64;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(trace > 0.0) {
        return invalid("PCA of a rank-0 sample cloud");
    }
    let (v1, l1) = leading(&cov, d, None);
    // Deflate and search in the orthogonal complement of v1.
    let mut cov2 = cov.clone();
    for i in 0..d {
        for j in 0..d {
            cov2[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = leading(&cov2, d, Some(&v1));
    let coords = centred.iter().map(|c| [dot(c, &v1), dot(c, &v2)]).collect();
    Ok(Projection {
        coords,
        explained_variance: [l1, l2.clamp(0.0, l1)],
        components: [v1, v2],
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn matvec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

fn orthonormalize(v: &mut [f64], against: Option<&[f64]>) -> f64 {
    if let Some(a) = against {
        let p = dot(v, a);
        v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
    }
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair of a symmetric PSD matrix, optionally restricted to the complement of
/// `against`. A null matrix yields any admissible unit vector with eigenvalue 0.
fn leading(m: &[f64], d: usize, against: Option<&[f64]>) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    orthonormalize(&mut v, against);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let mut w = matvec(m, &v, d);
        if orthonormalize(&mut w, against) < 1e-300 {
            return (basis_fallback(d, against), 0.0);
        }
        let next = dot(&w, &matvec(m, &w, d));
        let done = (next - lambda).abs() <= 1e-15 * next.abs().max(1e-300);
        v = w;
        lambda = next;
        if done {
            break;
        }
    }
    (v, lambda.max(0.0))
}

fn basis_fallback(d: usize, against: Option<&[f64]>) -> Vec<f64> {
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        if orthonormalize(&mut e, against) > 1e-6 {
            return e;
        }
    }
    unreachable!("d >= 2 leaves a nonzero complement")
}
