//! The cyst network: input assembly, the fixed four-stage wiring, training
//! and inference.
//!
//! Stages, for `C = K + 1` input channels (K GMP planes plus the prior):
//!
//! ```text
//! S1  Input1 (H,W,3,C) -> conv 1x1x3 valid, 9 -> squeeze                     -> Output2 (H,W,9)
//! S2  Input1 -> maxpool 2x2x1 -> conv 25x25x3, 9 -> conv 1x1x3 valid, 9
//!            -> squeeze                                                     -> Output6 (H/2,W/2,9)
//! S3  [Input2 | Output2] (H,W,C+9) -> conv 10x10, 8 -> maxpool 2x2          -> Output8 (H/2,W/2,8)
//! S4  [Output8 | Output6] (H/2,W/2,17) -> conv 25x25, 8 -> conv 1x1, 1
//!            -> sigmoid                                                     -> (H/2,W/2)
//! ```

use crate::gmp::GmpCake;
use crate::nn::{
    concat_channels, concat_channels_backward, render_metadata, sigmoid, sigmoid_backward, squeeze_depth,
    unsqueeze_depth, weighted_bce, Checkpoint, Conv2d, Conv3d, ConvCache, ConvGrads, ConvPlan, DepthPadding,
    Layer, MaxPool, NnError, PoolCache, Real, SgdNesterov, Tensor,
};
use crate::volume_io::{Image2D, Mask2D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Filters of the S1 and S2 volumetric stages.
pub const VOLUME_FILTERS: usize = 9;
/// Filters of the S3 and S4 planar stages.
pub const PLANE_FILTERS: usize = 8;
/// Neighbouring slices stacked into Input1.
pub const DEPTH: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("volume has no slices")]
    EmptyVolume,
    #[error("slice {z} out of range for {slices} slices")]
    SliceOutOfRange { z: usize, slices: usize },
    #[error("cakes differ in shape: {0}")]
    InconsistentCakes(String),
    #[error("no training slice contains cyst pixels")]
    NoPositiveSamples,
    #[error("ground truth is {got:?}, expected {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("checkpoint lacks array {0:?}")]
    MissingArray(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One cake flattened to `(H, W, K + 1)` with every GMP plane normalized to
/// zero mean and unit variance; the prior stays binary in the last channel.
pub fn normalized_cake(cake: &GmpCake) -> Tensor<f32> {
    let (rows, cols, k) = (cake.rows(), cake.cols(), cake.k());
    let c = k + 1;
    let mut out = vec![0.0f32; rows * cols * c];
    for (ch, plane) in cake.planes().iter().enumerate() {
        let n = plane.data().len() as f64;
        let mean = plane.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = plane.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        for (px, &v) in plane.data().iter().enumerate() {
            out[px * c + ch] = ((v as f64 - mean) * inv) as f32;
        }
    }
    for (px, &m) in cake.prior().data().iter().enumerate() {
        out[px * c + k] = m as f32;
    }
    Tensor::new(&[rows, cols, c], out).expect("cake dims")
}

/// Network inputs for slice `z`. The three depth planes of Input1 are the
/// normalized cakes of slices `z - 1`, `z` and `z + 1`; Input2 is the middle one.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    planes: [Arc<Tensor<f32>>; DEPTH],
    /// Half-resolution ground truth, when known.
    pub gt: Option<Mask2D>,
    pub z: usize,
}

impl SliceSample {
    pub fn rows(&self) -> usize {
        self.planes[1].dims()[0]
    }

    pub fn cols(&self) -> usize {
        self.planes[1].dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.planes[1].dims()[2]
    }

    /// `(H, W, 3, K + 1)`, assembled on demand.
    pub fn input1(&self) -> Tensor<f32> {
        let c = self.channels();
        let mut out = Vec::with_capacity(self.planes[1].len() * DEPTH);
        for px in 0..self.rows() * self.cols() {
            for p in &self.planes {
                out.extend_from_slice(&p.data()[px * c..(px + 1) * c]);
            }
        }
        Tensor::new(&[self.rows(), self.cols(), DEPTH, c], out).expect("sample dims")
    }

    /// `(H, W, K + 1)`
    pub fn input2(&self) -> &Tensor<f32> {
        &self.planes[1]
    }

    pub fn has_cyst(&self) -> bool {
        self.gt.as_ref().is_some_and(|g| !g.is_empty())
    }
}

/// Builds the sample of slice `z` from the cakes of a whole volume.
pub fn assemble_inputs(cakes: &[GmpCake], z: usize) -> Result<SliceSample, ModelError> {
    let norm = normalize_all(cakes)?;
    sample_at(&norm, z)
}

/// Samples for every slice; `gts`, when given, are full-resolution masks.
pub fn volume_samples(cakes: &[GmpCake], gts: Option<&[Mask2D]>) -> Result<Vec<SliceSample>, ModelError> {
    let norm = normalize_all(cakes)?;
    if let Some(g) = gts {
        if g.len() != cakes.len() {
            return Err(ModelError::InconsistentCakes(format!("{} cakes, {} masks", cakes.len(), g.len())));
        }
    }
    (0..cakes.len())
        .map(|z| {
            let mut s = sample_at(&norm, z)?;
            if let Some(g) = gts {
                s.gt = Some(downsample_gt(&g[z])?);
            }
            Ok(s)
        })
        .collect()
}

fn normalize_all(cakes: &[GmpCake]) -> Result<Vec<Arc<Tensor<f32>>>, ModelError> {
    let first = cakes.first().ok_or(ModelError::EmptyVolume)?;
    for c in cakes {
        if (c.rows(), c.cols(), c.k()) != (first.rows(), first.cols(), first.k()) {
            return Err(ModelError::InconsistentCakes(format!(
                "{:?} vs {:?}",
                (c.rows(), c.cols(), c.k()),
                (first.rows(), first.cols(), first.k())
            )));
        }
    }
    Ok(cakes.iter().map(|c| Arc::new(normalized_cake(c))).collect())
}

fn sample_at(norm: &[Arc<Tensor<f32>>], z: usize) -> Result<SliceSample, ModelError> {
    let n = norm.len();
    if n == 0 {
        return Err(ModelError::EmptyVolume);
    }
    if z >= n {
        return Err(ModelError::SliceOutOfRange { z, slices: n });
    }
    Ok(SliceSample {
        planes: [
            norm[z.saturating_sub(1)].clone(),
            norm[z].clone(),
            norm[(z + 1).min(n - 1)].clone(),
        ],
        gt: None,
        z,
    })
}

/// Half-resolution mask: a pixel is set iff any pixel of its 2x2 block is.
pub fn downsample_gt(mask: &Mask2D) -> Result<Mask2D, ModelError> {
    let (r, c) = (mask.rows(), mask.cols());
    if r % 2 != 0 || c % 2 != 0 {
        return Err(ModelError::DimMismatch {
            expected: (r + r % 2, c + c % 2),
            got: (r, c),
        });
    }
    Ok(Mask2D::from_fn(r / 2, c / 2, |i, j| {
        mask.get(2 * i, 2 * j) || mask.get(2 * i, 2 * j + 1) || mask.get(2 * i + 1, 2 * j) || mask.get(2 * i + 1, 2 * j + 1)
    }))
}

/// One row of the stage-by-stage shape listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeStep {
    pub output: &'static str,
    pub op: &'static str,
    pub input: Vec<usize>,
    pub result: Vec<usize>,
}

/// Weights of the four-stage network.
#[derive(Debug, Clone, PartialEq)]
pub struct CystNet<T> {
    pub s1: Conv3d<T>,
    pub s2a: Conv3d<T>,
    pub s2b: Conv3d<T>,
    pub s3: Conv2d<T>,
    pub s4a: Conv2d<T>,
    pub s4b: Conv2d<T>,
    /// ReLU after every convolution except the last; identity when false.
    pub relu: bool,
}

pub const PARAM_NAMES: [&str; 12] = [
    "s1.conv.weight",
    "s1.conv.bias",
    "s2.conv_a.weight",
    "s2.conv_a.bias",
    "s2.conv_b.weight",
    "s2.conv_b.bias",
    "s3.conv.weight",
    "s3.conv.bias",
    "s4.conv_a.weight",
    "s4.conv_a.bias",
    "s4.conv_b.weight",
    "s4.conv_b.bias",
];

fn kernels(c: usize) -> ([[usize; 5]; 3], [[usize; 4]; 3]) {
    let (v, p) = (VOLUME_FILTERS, PLANE_FILTERS);
    (
        [[1, 1, 3, c, v], [25, 25, 3, c, v], [1, 1, 3, v, v]],
        [[10, 10, c + v, p], [25, 25, p + v, p], [1, 1, p, 1]],
    )
}

impl<T: Real> CystNet<T> {
    /// All weights and biases zero; `channels` is `K + 1`.
    pub fn zeros(channels: usize) -> Self {
        let ([k1, k2a, k2b], [k3, k4a, k4b]) = kernels(channels);
        Self {
            s1: Conv3d::zeros(k1, DepthPadding::Valid),
            s2a: Conv3d::zeros(k2a, DepthPadding::Same),
            s2b: Conv3d::zeros(k2b, DepthPadding::Valid),
            s3: Conv2d::zeros(k3),
            s4a: Conv2d::zeros(k4a),
            s4b: Conv2d::zeros(k4b),
            relu: false,
        }
    }

    /// Glorot-uniform weights from a seeded stream, zero biases.
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ([k1, k2a, k2b], [k3, k4a, k4b]) = kernels(channels);
        Self {
            s1: Conv3d::glorot(k1, DepthPadding::Valid, &mut rng),
            s2a: Conv3d::glorot(k2a, DepthPadding::Same, &mut rng),
            s2b: Conv3d::glorot(k2b, DepthPadding::Valid, &mut rng),
            s3: Conv2d::glorot(k3, &mut rng),
            s4a: Conv2d::glorot(k4a, &mut rng),
            s4b: Conv2d::glorot(k4b, &mut rng),
            relu: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.s1.kernel()[3]
    }

    /// Parameters in [`PARAM_NAMES`] order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![
            &self.s1.weight,
            &self.s1.bias,
            &self.s2a.weight,
            &self.s2a.bias,
            &self.s2b.weight,
            &self.s2b.bias,
            &self.s3.weight,
            &self.s3.bias,
            &self.s4a.weight,
            &self.s4a.bias,
            &self.s4b.weight,
            &self.s4b.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.s1.weight,
            &mut self.s1.bias,
            &mut self.s2a.weight,
            &mut self.s2a.bias,
            &mut self.s2b.weight,
            &mut self.s2b.bias,
            &mut self.s3.weight,
            &mut self.s3.bias,
            &mut self.s4a.weight,
            &mut self.s4a.bias,
            &mut self.s4b.weight,
            &mut self.s4b.bias,
        ]
    }

    pub fn cast<U: Real>(&self) -> CystNet<U> {
        let mut out = CystNet::<U>::zeros(self.channels());
        for (d, s) in out.params_mut().into_iter().zip(self.params()) {
            *d = s.cast();
        }
        out.relu = self.relu;
        out.s1.engine = self.s1.engine;
        out.s2a.engine = self.s2a.engine;
        out.s2b.engine = self.s2b.engine;
        out.s3.engine = self.s3.engine;
        out.s4a.engine = self.s4a.engine;
        out.s4b.engine = self.s4b.engine;
        out
    }

    /// Convolutions bound to the current weights for inputs of `rows x cols`.
    pub fn plans(&self, rows: usize, cols: usize) -> Result<NetPlans<'_, T>, ModelError> {
        if rows % 2 != 0 || cols % 2 != 0 {
            return Err(NnError::OddSpatialDim(rows, cols).into());
        }
        let c = self.channels();
        let (hr, hc) = (rows / 2, cols / 2);
        Ok(NetPlans {
            net: self,
            s1: self.s1.plan(&[rows, cols, DEPTH, c])?,
            s2a: self.s2a.plan(&[hr, hc, DEPTH, c])?,
            s2b: self.s2b.plan(&[hr, hc, DEPTH, VOLUME_FILTERS])?,
            s3: self.s3.plan(&[rows, cols, c + VOLUME_FILTERS])?,
            s4a: self.s4a.plan(&[hr, hc, PLANE_FILTERS + VOLUME_FILTERS])?,
            s4b: self.s4b.plan(&[hr, hc, PLANE_FILTERS])?,
        })
    }

    /// Probability map `(H/2, W/2)`.
    pub fn forward(&self, input1: &Tensor<T>, input2: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let (h, w) = spatial(input2)?;
        Ok(self.plans(h, w)?.forward(input1, input2)?.0)
    }

    /// Input and output dims of every stage, in execution order.
    pub fn shape_trace(&self, input1: &Tensor<T>, input2: &Tensor<T>) -> Result<Vec<ShapeStep>, ModelError> {
        let (h, w) = spatial(input2)?;
        let plans = self.plans(h, w)?;
        let (_, trace) = plans.forward(input1, input2)?;
        Ok(trace.shapes)
    }

    pub fn to_checkpoint(&self, opt: Option<&SgdNesterov<T>>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, p) in PARAM_NAMES.iter().zip(self.params()) {
            ck.insert(*name, p.cast());
        }
        if let Some(opt) = opt {
            for (name, v) in PARAM_NAMES.iter().zip(&opt.velocities) {
                ck.insert(format!("vel.{name}"), v.cast());
            }
        }
        ck
    }

    /// Weights from a checkpoint, plus velocities when all are present.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<Vec<Tensor<T>>>), ModelError> {
        let w = ck.get(PARAM_NAMES[0]).ok_or_else(|| ModelError::MissingArray(PARAM_NAMES[0].into()))?;
        let channels = *w.dims().get(3).ok_or_else(|| NnError::BadCheckpoint("s1 weight rank".into()))?;
        let mut net = Self::zeros(channels);
        for (name, p) in PARAM_NAMES.iter().zip(net.params_mut()) {
            let t = ck.get(name).ok_or_else(|| ModelError::MissingArray((*name).into()))?;
            if t.dims() != p.dims() {
                return Err(NnError::BadCheckpoint(format!("{name}: {:?}, expected {:?}", t.dims(), p.dims())).into());
            }
            *p = t.cast();
        }
        let vels: Option<Vec<Tensor<T>>> = PARAM_NAMES.iter().map(|n| ck.get(&format!("vel.{n}")).map(|t| t.cast())).collect();
        Ok((net, vels))
    }
}

fn spatial<T: Real>(t: &Tensor<T>) -> Result<(usize, usize), ModelError> {
    match *t.dims() {
        [h, w, _] => Ok((h, w)),
        _ => Err(NnError::ShapeMismatch {
            op: "network",
            detail: format!("Input2 must be (H, W, C), got {:?}", t.dims()),
        }
        .into()),
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<T: Real> {
    c1: ConvCache<T>,
    m1: Option<Vec<bool>>,
    c2a: ConvCache<T>,
    m2a: Option<Vec<bool>>,
    c2b: ConvCache<T>,
    m2b: Option<Vec<bool>>,
    c3: ConvCache<T>,
    m3: Option<Vec<bool>>,
    p3: PoolCache,
    c4a: ConvCache<T>,
    m4a: Option<Vec<bool>>,
    c4b: ConvCache<T>,
    prob: Tensor<T>,
    pub shapes: Vec<ShapeStep>,
}

/// Accumulated parameter gradients of the six convolutions.
pub struct NetGrads<T: Real> {
    g: [ConvGrads<T>; 6],
}

pub struct NetPlans<'a, T: Real> {
    net: &'a CystNet<T>,
    s1: ConvPlan<'a, T>,
    s2a: ConvPlan<'a, T>,
    s2b: ConvPlan<'a, T>,
    s3: ConvPlan<'a, T>,
    s4a: ConvPlan<'a, T>,
    s4b: ConvPlan<'a, T>,
}

fn relu_fwd<T: Real>(on: bool, mut t: Tensor<T>) -> (Tensor<T>, Option<Vec<bool>>) {
    if !on {
        return (t, None);
    }
    let mask: Vec<bool> = t.data().iter().map(|&v| v > T::zero()).collect();
    for (v, &m) in t.data_mut().iter_mut().zip(&mask) {
        if !m {
            *v = T::zero();
        }
    }
    (t, Some(mask))
}

fn relu_back<T: Real>(mask: &Option<Vec<bool>>, mut dy: Tensor<T>) -> Tensor<T> {
    if let Some(mask) = mask {
        for (v, &m) in dy.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = T::zero();
            }
        }
    }
    dy
}

fn step(output: &'static str, op: &'static str, input: &[usize], result: &[usize]) -> ShapeStep {
    ShapeStep {
        output,
        op,
        input: input.to_vec(),
        result: result.to_vec(),
    }
}

impl<'a, T: Real> NetPlans<'a, T> {
    pub fn new_grads(&self) -> NetGrads<T> {
        NetGrads {
            g: [
                self.s1.new_grads(),
                self.s2a.new_grads(),
                self.s2b.new_grads(),
                self.s3.new_grads(),
                self.s4a.new_grads(),
                self.s4b.new_grads(),
            ],
        }
    }

    pub fn forward(&self, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>), NnError> {
        let relu = self.net.relu;
        let mut shapes = Vec::with_capacity(10);

        let (o1, c1) = self.s1.forward(x1)?;
        shapes.push(step("Output 1", "conv 1x1x3", x1.dims(), o1.dims()));
        let (o1, m1) = relu_fwd(relu, o1);
        let o1_dims = o1.dims().to_vec();
        let o2 = squeeze_depth(o1)?;
        shapes.push(step("Output 2", "reshape", &o1_dims, o2.dims()));

        // Input1 is data, so the pooling indices are not needed for backward.
        let (o3, _) = Layer::<T>::forward(&MaxPool, x1)?;
        shapes.push(step("Output 3", "maxpool 2x2x1", x1.dims(), o3.dims()));
        let (o4, c2a) = self.s2a.forward(&o3)?;
        shapes.push(step("Output 4", "conv 25x25x3", o3.dims(), o4.dims()));
        let (o4, m2a) = relu_fwd(relu, o4);
        let (o5, c2b) = self.s2b.forward(&o4)?;
        shapes.push(step("Output 5", "conv 1x1x3", o4.dims(), o5.dims()));
        let (o5, m2b) = relu_fwd(relu, o5);
        let o5_dims = o5.dims().to_vec();
        let o6 = squeeze_depth(o5)?;
        shapes.push(step("Output 6", "reshape", &o5_dims, o6.dims()));

        let cat3 = concat_channels(&[x2, &o2])?;
        let (o7, c3) = self.s3.forward(&cat3)?;
        shapes.push(step("Output 7", "conv 10x10", cat3.dims(), o7.dims()));
        let (o7, m3) = relu_fwd(relu, o7);
        let (o8, p3) = Layer::<T>::forward(&MaxPool, &o7)?;
        shapes.push(step("Output 8", "maxpool 2x2", o7.dims(), o8.dims()));

        let cat4 = concat_channels(&[&o8, &o6])?;
        let (o9, c4a) = self.s4a.forward(&cat4)?;
        shapes.push(step("Output 9", "conv 25x25", cat4.dims(), o9.dims()));
        let (o9, m4a) = relu_fwd(relu, o9);
        let (z, c4b) = self.s4b.forward(&o9)?;
        let (h, w) = (z.dims()[0], z.dims()[1]);
        let prob = sigmoid(&z.reshape(&[h, w])?);
        shapes.push(step("Probability map", "conv 1x1", o9.dims(), prob.dims()));

        let trace = Trace {
            c1,
            m1,
            c2a,
            m2a,
            c2b,
            m2b,
            c3,
            m3,
            p3,
            c4a,
            m4a,
            c4b,
            prob: prob.clone(),
            shapes,
        };
        Ok((prob, trace))
    }

    /// Accumulates parameter gradients for `d loss / d prob`.
    pub fn backward(&self, trace: &Trace<T>, dprob: &Tensor<T>, grads: &mut NetGrads<T>) -> Result<(), NnError> {
        let c = self.net.channels();
        let [g1, g2a, g2b, g3, g4a, g4b] = &mut grads.g;
        let (h, w) = (trace.prob.dims()[0], trace.prob.dims()[1]);
        let dz = sigmoid_backward(&trace.prob, dprob).reshape(&[h, w, 1])?;
        let d9 = self.s4b.backward(&trace.c4b, &dz, g4b, true)?.expect("dx");
        let d9 = relu_back(&trace.m4a, d9);
        let dcat4 = self.s4a.backward(&trace.c4a, &d9, g4a, true)?.expect("dx");
        let [d8, d6]: [Tensor<T>; 2] = concat_channels_backward(&dcat4, &[PLANE_FILTERS, VOLUME_FILTERS])?
            .try_into()
            .expect("two parts");

        let d7 = Layer::<T>::backward(&MaxPool, &trace.p3, &d8)?.d_input;
        let d7 = relu_back(&trace.m3, d7);
        let dcat3 = self.s3.backward(&trace.c3, &d7, g3, true)?.expect("dx");
        let d2 = concat_channels_backward(&dcat3, &[c, VOLUME_FILTERS])?.pop().expect("two parts");

        let d5 = relu_back(&trace.m2b, unsqueeze_depth(d6)?);
        let d4 = self.s2b.backward(&trace.c2b, &d5, g2b, true)?.expect("dx");
        let d4 = relu_back(&trace.m2a, d4);
        self.s2a.backward(&trace.c2a, &d4, g2a, false)?;

        let d1 = relu_back(&trace.m1, unsqueeze_depth(d2)?);
        self.s1.backward(&trace.c1, &d1, g1, false)?;
        Ok(())
    }

    /// Gradients in [`PARAM_NAMES`] order.
    pub fn finish(&self, grads: NetGrads<T>) -> Vec<Tensor<T>> {
        let plans = [&self.s1, &self.s2a, &self.s2b, &self.s3, &self.s4a, &self.s4b];
        let mut out = Vec::with_capacity(12);
        for ((plan, g), p) in plans.into_iter().zip(grads.g).zip(self.net.params().chunks(2)) {
            let (dw, db) = plan.finish(g);
            out.push(Tensor::new(p[0].dims(), dw).expect("weight dims"));
            out.push(Tensor::new(p[1].dims(), db).expect("bias dims"));
        }
        out
    }
}

/// How the positive-class weight of the loss is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosWeight {
    /// `#background / #cyst` over the batch's labels, clamped to [`POS_WEIGHT_RANGE`].
    PerBatch,
    Fixed(f64),
}

pub const POS_WEIGHT_RANGE: (f64, f64) = (1.0, 500.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pos_weight: PosWeight,
    pub seed: u64,
    /// Checkpoint callback period in epochs; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 0.001,
            momentum: 0.75,
            batch_size: 8,
            epochs: 100,
            pos_weight: PosWeight::PerBatch,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidHyperparams(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("positive weight must be positive, got {w}"));
            }
        }
        Ok(())
    }
}

/// Positive-class weight for a set of half-resolution labels.
pub fn batch_pos_weight<'m>(labels: impl IntoIterator<Item = &'m Mask2D>) -> f64 {
    let (mut pos, mut total) = (0usize, 0usize);
    for m in labels {
        pos += m.count();
        total += m.data().len();
    }
    let (lo, hi) = POS_WEIGHT_RANGE;
    if pos == 0 {
        return hi;
    }
    ((total - pos) as f64 / pos as f64).clamp(lo, hi)
}

/// Loss and parameter gradients of one minibatch. Per-sample losses are
/// averaged, so gradients are the batch mean.
pub fn batch_gradients<T: Real>(
    net: &CystNet<T>,
    batch: &[&SliceSample],
    pos_weight: f64,
) -> Result<(f64, Vec<Tensor<T>>), ModelError> {
    let first = batch.first().ok_or(ModelError::NoPositiveSamples)?;
    let plans = net.plans(first.rows(), first.cols())?;
    let mut grads = plans.new_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let gt = s.gt.as_ref().ok_or(ModelError::NoPositiveSamples)?;
        let x1 = s.input1().cast::<T>();
        let x2 = s.input2().cast::<T>();
        let (prob, trace) = plans.forward(&x1, &x2)?;
        if (gt.rows(), gt.cols()) != (prob.dims()[0], prob.dims()[1]) {
            return Err(ModelError::DimMismatch {
                expected: (prob.dims()[0], prob.dims()[1]),
                got: (gt.rows(), gt.cols()),
            });
        }
        let (l, mut dp) = weighted_bce(&prob, gt.data(), pos_weight)?;
        dp.data_mut().iter_mut().for_each(|v| *v = *v * T::of(scale));
        plans.backward(&trace, &dp, &mut grads)?;
        loss += l * scale;
    }
    Ok((loss, plans.finish(grads)))
}

/// Mini-batch Nesterov SGD over cyst-bearing samples.
pub struct Trainer {
    pub net: CystNet<f32>,
    pub opt: SgdNesterov<f32>,
    pub hp: Hyperparams,
    /// Mean training loss of each completed epoch.
    pub history: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(net: CystNet<f32>, hp: Hyperparams) -> Result<Self, ModelError> {
        hp.validate()?;
        let shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.dims().to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let opt = SgdNesterov::new(hp.lr, hp.momentum, &refs);
        // The shuffling stream is kept apart from the initialization stream.
        let rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            net,
            opt,
            hp,
            history: Vec::new(),
            rng,
        })
    }

    /// Runs one epoch over the cyst-bearing subset of `samples`.
    pub fn run_epoch(&mut self, samples: &[SliceSample]) -> Result<f64, ModelError> {
        let mut order: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].has_cyst()).collect();
        if order.is_empty() {
            return Err(ModelError::NoPositiveSamples);
        }
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.hp.batch_size) {
            let batch: Vec<&SliceSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let w = match self.hp.pos_weight {
                PosWeight::PerBatch => batch_pos_weight(batch.iter().filter_map(|s| s.gt.as_ref())),
                PosWeight::Fixed(w) => w,
            };
            let (loss, grads) = batch_gradients(&self.net, &batch, w)?;
            self.opt.step(self.net.params_mut(), &grads);
            total += loss * batch.len() as f64;
        }
        let mean = total / order.len() as f64;
        self.history.push(mean);
        Ok(mean)
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.net.to_checkpoint(Some(&self.opt))
    }

    /// `key=value` sidecar text describing the current state.
    pub fn metadata(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("epoch".to_string(), self.epoch().to_string());
        m.insert("lr".to_string(), self.hp.lr.to_string());
        m.insert("momentum".to_string(), self.hp.momentum.to_string());
        m.insert("batch".to_string(), self.hp.batch_size.to_string());
        m.insert("seed".to_string(), self.hp.seed.to_string());
        m.insert("channels".to_string(), self.net.channels().to_string());
        m.insert("relu".to_string(), self.net.relu.to_string());
        if let Some(l) = self.history.last() {
            m.insert("loss".to_string(), format!("{l:.9}"));
        }
        render_metadata(&m)
    }
}

/// Trains a freshly initialized network for `hp.epochs` epochs.
///
/// `on_checkpoint(epoch, trainer)` runs every `hp.checkpoint_every` epochs and
/// after the last one.
pub fn train(
    channels: usize,
    samples: &[SliceSample],
    hp: &Hyperparams,
    relu: bool,
    mut on_checkpoint: impl FnMut(usize, &Trainer),
) -> Result<Trainer, ModelError> {
    if !samples.iter().any(SliceSample::has_cyst) {
        return Err(ModelError::NoPositiveSamples);
    }
    let mut net = CystNet::init(channels, hp.seed);
    net.relu = relu;
    let mut t = Trainer::new(net, hp.clone())?;
    for e in 1..=hp.epochs {
        t.run_epoch(samples)?;
        if e == hp.epochs || (hp.checkpoint_every > 0 && e % hp.checkpoint_every == 0) {
            on_checkpoint(e, &t);
        }
    }
    Ok(t)
}

/// Probability map of every sample, in order.
pub fn infer_volume(net: &CystNet<f32>, samples: &[SliceSample]) -> Result<Vec<Image2D>, ModelError> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let plans = net.plans(first.rows(), first.cols())?;
    samples
        .iter()
        .map(|s| {
            let (prob, _) = plans.forward(&s.input1(), s.input2())?;
            let (h, w) = (prob.dims()[0], prob.dims()[1]);
            Ok(Image2D::new(h, w, prob.into_data()).expect("finite probabilities"))
        })
        .collect()
}
