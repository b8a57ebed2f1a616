//! A small layer toolkit: exactly the operations the cyst network needs, each
//! with a hand-written backward pass.
//!
//! Activations are dense [`Tensor`]s laid out `(H, W, D, C)` with `C` fastest.
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient checks run in `f64`.

mod checkpoint;
mod conv;
mod fft;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use checkpoint::{parse_metadata, render_metadata, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{Conv2d, Conv3d, ConvCache, ConvEngine, ConvGrads, ConvPlan, DepthPadding};
pub use gradcheck::{grad_check, relative_error, sample_indices, GradCheckReport, GRAD_CHECK_FLOOR};
pub use layers::{
    concat_channels, concat_channels_backward, sigmoid, sigmoid_backward, squeeze_depth, unsqueeze_depth,
    MaxPool, PoolCache, Sigmoid, SqueezeDepth,
};
pub use loss::{weighted_bce, BCE_CLAMP};
pub use optim::{sgd_nesterov_step, SgdNesterov};
pub use tensor::Tensor;

use num_traits::Float;
use rustfft::FftNum;
use thiserror::Error;

/// Floating-point element type of tensors.
pub trait Real: Float + FftNum + Default + std::iter::Sum + Send + Sync + std::fmt::Display + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("depth {depth} is smaller than kernel depth {kernel}")]
    DepthTooSmall { depth: usize, kernel: usize },
    #[error("max-pooling needs even spatial dims, got {0}x{1}")]
    OddSpatialDim(usize, usize),
    #[error("expected depth 1, got {0}")]
    DepthNotOne(usize),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("metadata line {line}: {reason}")]
    BadMetadata { line: usize, reason: String },
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

/// Gradients produced by a layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub d_input: Tensor<T>,
    /// One tensor per entry of [`Layer::params`], same order and shape.
    pub d_params: Vec<Tensor<T>>,
}

/// A single-input differentiable operation.
pub trait Layer<T: Real> {
    type Cache;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache), NnError>;

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>) -> Result<LayerGrads<T>, NnError>;

    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}
