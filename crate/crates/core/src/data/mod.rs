//! Labelled datasets with features in `[0, 1]`.

mod idx;
mod synthetic;

pub use idx::{load_idx, parse_idx};
pub use synthetic::{make_synthetic, SyntheticKind};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Validates `n ≥ 1`, finite features inside `[0, 1]`, and labels below `num_classes`.
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let features = features.reshape_rows(labels.len())?;
        features.ensure_finite("dataset features")?;
        if let Some(v) = features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("feature value {v} outside [0, 1]"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    /// Min-max scales every feature column into `[0, 1]`; constant columns map to 0.5.
    pub fn from_raw(raw: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let mut raw = raw.reshape_rows(labels.len())?;
        raw.ensure_finite("dataset features")?;
        let (n, d) = (raw.rows(), raw.cols());
        for j in 0..d {
            let col = (0..n).map(|i| raw.row(i)[j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            for i in 0..n {
                let v = &mut raw.row_mut(i)[j];
                *v = if hi > lo {
                    ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
        Self::new(raw, labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if idx.iter().any(|&i| i >= self.len()) {
            return invalid("subset index out of range");
        }
        Ok(Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    /// Seeded shuffle, then the first `test_fraction` of rows become the test split.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return invalid("test fraction must lie in (0, 1)");
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test =
            ((self.len() as f64 * test_fraction).round() as usize).clamp(1, self.len() - 1);
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train)?, self.subset(test)?))
    }
}

trait ReshapeRows: Sized {
    fn reshape_rows(self, n: usize) -> Result<Self>;
}

impl ReshapeRows for Tensor {
    fn reshape_rows(self, n: usize) -> Result<Self> {
        if n == 0 || !self.len().is_multiple_of(n) {
            return shape_err("dataset", format!("{} values for {n} labels", self.len()));
        }
        let d = self.len() / n;
        self.reshape(vec![n, d])
    }
}
