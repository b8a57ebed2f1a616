//! Central-difference checks of hand-written backward passes.

use super::{Layer, NnError, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Denominator floor of [`relative_error`], so that gradients that are both
/// essentially zero do not divide by zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Worst relative error per checked array.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub input: f64,
    /// One entry per parameter array, in [`Layer::params`] order.
    pub params: Vec<f64>,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.params.iter().copied().fold(self.input, f64::max)
    }
}

/// Up to `samples` indices spread evenly over `0..len`.
pub fn sample_indices(len: usize, samples: usize) -> Vec<usize> {
    if samples >= len {
        return (0..len).collect();
    }
    (0..samples).map(|i| i * len / samples).collect()
}

/// Checks a layer against the scalar `L = sum(r * y)` for a fixed random `r`.
///
/// Up to `samples` entries of the input and of every parameter array are
/// perturbed by `+-eps`.
pub fn grad_check<T: Real, L: Layer<T>>(
    layer: &mut L,
    x: &Tensor<T>,
    eps: f64,
    samples: usize,
) -> Result<GradCheckReport, NnError> {
    let (y, cache) = layer.forward(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r: Vec<T> = (0..y.len()).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect();
    let dy = Tensor::new(y.dims(), r.clone())?;
    let grads = layer.backward(&cache, &dy)?;

    let objective = |layer: &L, x: &Tensor<T>| -> Result<f64, NnError> {
        let (y, _) = layer.forward(x)?;
        Ok(y.data().iter().zip(&r).map(|(a, b)| a.as_f64() * b.as_f64()).sum())
    };

    let mut xp = x.clone();
    let mut input = 0.0f64;
    for i in sample_indices(x.len(), samples) {
        let orig = xp.data()[i];
        xp.data_mut()[i] = T::of(orig.as_f64() + eps);
        let hi = objective(layer, &xp)?;
        xp.data_mut()[i] = T::of(orig.as_f64() - eps);
        let lo = objective(layer, &xp)?;
        xp.data_mut()[i] = orig;
        input = input.max(relative_error(grads.d_input.data()[i].as_f64(), (hi - lo) / (2.0 * eps)));
    }

    let mut params = Vec::new();
    for (k, g) in grads.d_params.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in sample_indices(g.len(), samples) {
            let orig = layer.params()[k].data()[i];
            layer.params_mut()[k].data_mut()[i] = T::of(orig.as_f64() + eps);
            let hi = objective(layer, x)?;
            layer.params_mut()[k].data_mut()[i] = T::of(orig.as_f64() - eps);
            let lo = objective(layer, x)?;
            layer.params_mut()[k].data_mut()[i] = orig;
            worst = worst.max(relative_error(g.data()[i].as_f64(), (hi - lo) / (2.0 * eps)));
        }
        params.push(worst);
    }
    Ok(GradCheckReport { input, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-9, 0.0), 1e-3);
        assert!((relative_error(1.0, 1.01) - 0.01 / 1.01).abs() < 1e-15);
    }

    #[test]
    fn sampling_spreads_and_caps() {
        assert_eq!(sample_indices(3, 10), vec![0, 1, 2]);
        assert_eq!(sample_indices(10, 5), vec![0, 2, 4, 6, 8]);
    }
}
