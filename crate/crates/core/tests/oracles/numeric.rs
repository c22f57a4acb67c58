//! Small numerical tools used only as independent references.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        // Below rounding level further halving cannot help.
        if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // Start from a fixed subdivision so narrow features are not skipped.
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            recurse(
                &f,
                lo,
                hi,
                fa,
                fm,
                fb,
                simpson(fa, fm, fb, lo, hi),
                tol / pieces as f64,
                30,
            )
        })
        .sum()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `d × d` row-major matrix.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn jacobi_eigen(m: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = m.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i * d + i]).collect(), v)
}

pub fn symmetric_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    jacobi_eigen(m, d).0
}

/// Gauss-Hermite nodes and weights for `∫ e^{−x²} f(x) dx` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = vec![0.0; n * n];
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k - 1) * n + k] = b;
        j[k * n + k - 1] = b;
    }
    let (nodes, vecs) = jacobi_eigen(&j, n);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let weights = (0..n).map(|i| sqrt_pi * vecs[i] * vecs[i]).collect();
    (nodes, weights)
}

#[test]
fn hermite_integrates_moments() {
    let (x, w) = gauss_hermite(20);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let m0: f64 = w.iter().sum();
    let m2: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
    let m4: f64 = x.iter().zip(&w).map(|(a, b)| a.powi(4) * b).sum();
    assert!((m0 - sqrt_pi).abs() < 1e-13);
    assert!((m2 - sqrt_pi / 2.0).abs() < 1e-13);
    assert!((m4 - 0.75 * sqrt_pi).abs() < 1e-12);
}

#[test]
fn simpson_integrates_gaussian() {
    let v = adaptive_simpson(|x: f64| (-x * x / 2.0).exp(), -12.0, 12.0, 1e-12);
    assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
}

#[test]
fn jacobi_recovers_known_spectrum() {
    let m = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -4.0];
    let mut e = symmetric_eigenvalues(&m, 3);
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((e[0] + 4.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12 && (e[2] - 3.0).abs() < 1e-12);
}
