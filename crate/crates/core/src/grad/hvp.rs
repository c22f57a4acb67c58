//! Hessian-vector products by central differences of first-order gradients.

use crate::error::{invalid, Error, Result};
use crate::grad::tensor::Tensor;

/// `H v` for the Hessian of the function whose gradient is `grad`, at `x`.
///
/// Uses `(∇f(x + h v) − ∇f(x − h v)) / 2h` with the probe displacement `h‖v‖₂`
/// set to `1e-4 · max(1, ‖x‖∞)`.
pub fn hvp<F>(mut grad: F, x: &Tensor, v: &Tensor) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if x.shape() != v.shape() {
        return invalid(format!(
            "hvp: v {:?} does not match x {:?}",
            v.shape(),
            x.shape()
        ));
    }
    let vn = v.norm_l2();
    if !(vn > 0.0 && vn.is_finite()) {
        return invalid("hvp: direction must have positive finite norm");
    }
    let h = 1e-4 * x.norm_inf().max(1.0) / vn;
    let plus = x.add(&v.scale(h))?;
    let minus = x.sub(&v.scale(h))?;
    let gp = grad(&plus)?;
    let gm = grad(&minus)?;
    let out = gp.sub(&gm)?.scale(0.5 / h);
    if !out.all_finite() {
        return Err(Error::NonFinite("hvp"));
    }
    Ok(out)
}
