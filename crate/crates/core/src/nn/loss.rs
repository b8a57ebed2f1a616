use super::{shape_err, NnError, Real, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Class-weighted binary cross-entropy averaged over all pixels:
///
/// ```text
/// L = -mean(w_pos * y * ln p + (1 - y) * ln(1 - p))
/// ```
///
/// Returns the loss and `dL/dp`. The gradient is evaluated at the clamped
/// probability and passed straight through the clamp.
pub fn weighted_bce<T: Real>(p: &Tensor<T>, target: &[u8], w_pos: f64) -> Result<(f64, Tensor<T>), NnError> {
    if p.len() != target.len() {
        return Err(shape_err("bce", format!("{} predictions, {} labels", p.len(), target.len())));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .data()
        .iter()
        .zip(target)
        .map(|(&pv, &y)| {
            let pc = pv.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y != 0 {
                loss -= w_pos * pc.ln();
                T::of(-w_pos / (pc * n))
            } else {
                loss -= (1.0 - pc).ln();
                T::of(1.0 / ((1.0 - pc) * n))
            }
        })
        .collect();
    Ok((loss / n, Tensor::new(p.dims(), grad)?))
}
