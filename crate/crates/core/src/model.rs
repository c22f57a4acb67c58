//! Model interfaces seen by attacks and evaluation.
//!
//! [`QueryModel`] only answers logit queries, which is all a black-box attack
//! may use. [`GradModel`] additionally records its computation on a tape.

use crate::error::{shape_err, Result};
use crate::grad::{Network, Tape, Tensor, Var};

pub trait QueryModel {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// Logits for a `[n, d]` batch.
    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    /// Argmax predictions, ties to the lowest class index.
    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }
}

pub trait GradModel: QueryModel {
    fn logits_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var>;

    /// Penultimate representation, used by the feature-space attack.
    fn features_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var>;
}

impl QueryModel for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        self.output_dim()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.predict(x)
    }
}

impl GradModel for Network {
    fn logits_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.forward(tape, x)
    }

    fn features_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.bind(tape).features(tape, x)
    }
}

/// Cross-entropy per row and its gradient with respect to the input batch.
pub fn input_gradient(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
) -> Result<(Vec<f64>, Tensor)> {
    if x.rows() != y.len() {
        return shape_err("input_gradient", "row/label count mismatch");
    }
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let z = model.logits_on_tape(&mut tape, xv)?;
    let ce = tape.cross_entropy(z, y)?;
    let total = tape.sum(ce)?;
    let losses = tape.value(ce).data().to_vec();
    let g = tape.backward(total)?;
    Ok((losses, g.get(xv)))
}

/// Fraction of rows of `x` classified as `y`.
pub fn accuracy(model: &dyn QueryModel, x: &Tensor, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict(x)?;
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len() as f64)
}
