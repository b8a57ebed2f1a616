use super::{shape_err, NnError, Real};

/// Dense array of rank 1 to 5. Activations use `(H, W[, D], C)` with the
/// last dimension fastest; conv kernels are `(kh, kw[, kd], Cin, Cout)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        if dims.is_empty() || dims.len() > 5 {
            return Err(shape_err("tensor", format!("unsupported rank {}", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err("tensor", format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under new dims of equal total size.
    pub fn reshape(self, dims: &[usize]) -> Result<Self, NnError> {
        Self::new(dims, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// NaN/inf guard run after every op in debug builds.
    #[inline]
    pub(crate) fn debug_check(self, op: &str) -> Self {
        debug_assert!(self.all_finite(), "{op} produced a non-finite value");
        self
    }

    /// `(H, W, D, C)` view of a rank 2, 3 or 4 activation.
    pub(crate) fn hwdc(&self) -> Option<(usize, usize, usize, usize)> {
        match *self.dims.as_slice() {
            [h, w] => Some((h, w, 1, 1)),
            [h, w, c] => Some((h, w, 1, c)),
            [h, w, d, c] => Some((h, w, d, c)),
            _ => None,
        }
    }
}
