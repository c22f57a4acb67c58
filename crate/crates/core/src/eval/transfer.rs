use crate::attacks::Attack;
use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::eval::robust::correct_under;
use crate::model::GradModel;

/// Accuracy of `target` on adversarial examples crafted against `source`.
pub fn transfer_eval(
    source: &dyn GradModel,
    target: &dyn GradModel,
    data: &Dataset,
    attack: &dyn Attack,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if source.input_dim() != target.input_dim() || source.input_dim() != data.dim() {
        return shape_err(
            "transfer_eval",
            format!(
                "source dim {}, target dim {}, data dim {}",
                source.input_dim(),
                target.input_dim(),
                data.dim()
            ),
        );
    }
    let c = correct_under(source, target, data.features(), data.labels(), attack, seed)?;
    Ok(c.iter().filter(|&&v| v).count() as f64 / c.len() as f64)
}
