use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoMoons,
    Blobs,
    Circles,
}

/// Two-class 2-D data; example `i` has label `i % 2`. Features are min-max scaled to `[0, 1]`.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return invalid("synthetic datasets need n >= 2");
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid("noise must be nonnegative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let (x, y) = match kind {
            SyntheticKind::TwoMoons => {
                let t = rng.random_range(0.0..std::f64::consts::PI);
                if label == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
            SyntheticKind::Blobs => {
                if label == 0 {
                    (-2.0, -2.0)
                } else {
                    (2.0, 2.0)
                }
            }
            SyntheticKind::Circles => {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let r = if label == 0 { 1.0 } else { 0.5 };
                (r * t.cos(), r * t.sin())
            }
        };
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        raw.push(x + noise * ex);
        raw.push(y + noise * ey);
        labels.push(label);
    }
    Dataset::from_raw(Tensor::new(vec![n, 2], raw)?, labels, 2)
}
