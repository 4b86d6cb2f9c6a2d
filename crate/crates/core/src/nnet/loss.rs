use super::tensor::Tensor4;
use crate::error::Result;

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    pred.same_dims(target)?;
    let n = pred.len() as f64;
    let mut grad = pred.clone();
    let mut total = 0.0;
    for (g, t) in grad.data.iter_mut().zip(&target.data) {
        let d = *g - t;
        total += d * d;
        *g = 2.0 * d / n;
    }
    Ok((total / n, grad))
}
