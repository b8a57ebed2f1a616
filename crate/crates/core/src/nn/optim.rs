use super::{Real, Tensor};

/// In-place Nesterov momentum step on one parameter array:
///
/// ```text
/// v <- mu * v - lr * g
/// p <- p + mu * v - lr * g
/// ```
pub fn sgd_nesterov_step<T: Real>(param: &mut [T], velocity: &mut [T], grad: &[T], lr: f64, momentum: f64) {
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for ((p, v), &g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v - lr * g;
        *p = *p + mu * *v - lr * g;
    }
}

/// Nesterov-momentum SGD holding one velocity buffer per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdNesterov<T> {
    pub lr: f64,
    pub momentum: f64,
    pub velocities: Vec<Tensor<T>>,
}

impl<T: Real> SgdNesterov<T> {
    pub fn new(lr: f64, momentum: f64, shapes: &[&[usize]]) -> Self {
        Self {
            lr,
            momentum,
            velocities: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// `params` and `grads` must follow the order used at construction.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) {
        assert_eq!(params.len(), self.velocities.len(), "parameter count changed");
        for ((p, v), g) in params.into_iter().zip(&mut self.velocities).zip(grads) {
            sgd_nesterov_step(p.data_mut(), v.data_mut(), g.data(), self.lr, self.momentum);
        }
    }
}
