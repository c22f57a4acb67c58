//! Classification losses evaluated directly on logits, without a tape.
//!
//! The tape composites [`Tape::cross_entropy`](crate::grad::Tape::cross_entropy) and
//! [`Tape::kl_div`](crate::grad::Tape::kl_div) compute the same quantities; these
//! standalone versions serve plain evaluation and cross-checks.

use crate::error::{shape_err, Error, Result};
use crate::grad::tensor::Tensor;

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `-log softmax(logits)[label]` for one example.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    if logits.ndim() > 1 && logits.rows() != 1 {
        return shape_err(
            "softmax_cross_entropy",
            "expects logits of a single example",
        );
    }
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    Ok(-log_softmax(z)[label])
}

/// `KL(softmax(p) || softmax(q))` for one example.
pub fn kl_divergence(p_logits: &Tensor, q_logits: &Tensor) -> Result<f64> {
    if p_logits.shape() != q_logits.shape() {
        return shape_err(
            "kl_divergence",
            format!("{:?} vs {:?}", p_logits.shape(), q_logits.shape()),
        );
    }
    let lp = log_softmax(p_logits.data());
    let lq = log_softmax(q_logits.data());
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    // Rounding can leave a tiny negative residue when p == q.
    Ok(kl.max(0.0))
}

/// Row-wise cross entropy of a `[n, C]` logit matrix.
pub fn cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.rows() != labels.len() {
        return shape_err("cross_entropy_rows", "row/label count mismatch");
    }
    (0..labels.len())
        .map(|i| softmax_cross_entropy(&Tensor::vector(logits.row(i)), labels[i]))
        .collect()
}
