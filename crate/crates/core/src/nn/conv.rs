//! 2D and 3D "same"-padded cross-correlation with bias.
//!
//! For output position `(h, w, d)` and output channel `co`:
//!
//! ```text
//! y = b[co] + sum_{i,j,z,ci} x(h + i - pt, w + j - pl, d + z - pf, ci) * k(i, j, z, ci, co)
//! ```
//!
//! with zero padding. Spatially `pt = (kh - 1) / 2` and `pl = (kw - 1) / 2`,
//! so an even kernel puts the extra padding row/column at the bottom/right.
//! In depth, `Valid` uses `pf = 0` and shrinks `D` to `D - kd + 1`; `Same` uses
//! `pf = (kd - 1) / 2` and keeps `D`.
//!
//! Two engines compute the same map. `Direct` loops over taps and suits
//! point-like kernels. `Fft` multiplies zero-padded spectra; it is used for
//! the large kernels, where it is orders of magnitude cheaper. A
//! [`ConvPlan`] transforms the kernel once and can then be reused for every
//! item of a minibatch; weight gradients are accumulated in the frequency
//! domain and transformed back once in [`ConvPlan::finish`].

use super::fft::{mac, mac_conj, smooth_size, Fft2};
use super::{shape_err, Layer, LayerGrads, NnError, Real, Tensor};
use rand::Rng;
use rustfft::num_complex::Complex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthPadding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvEngine {
    /// FFT for kernels with at least [`FFT_MIN_TAPS`] spatial taps, direct otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

const FFT_MIN_TAPS: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    d_in: usize,
    d_out: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    kd: usize,
    pt: usize,
    pl: usize,
    pf: usize,
}

impl Geometry {
    fn new(
        x: (usize, usize, usize, usize),
        k: [usize; 5],
        depth: DepthPadding,
    ) -> Result<Self, NnError> {
        let (h, w, d_in, cin) = x;
        let [kh, kw, kd, kcin, cout] = k;
        if kcin != cin {
            return Err(shape_err("conv", format!("input has {cin} channels, kernel expects {kcin}")));
        }
        if kh == 0 || kw == 0 || kd == 0 {
            return Err(shape_err("conv", "empty kernel"));
        }
        let (d_out, pf) = match depth {
            DepthPadding::Valid => {
                if d_in < kd {
                    return Err(NnError::DepthTooSmall { depth: d_in, kernel: kd });
                }
                (d_in - kd + 1, 0)
            }
            DepthPadding::Same => (d_in, (kd - 1) / 2),
        };
        Ok(Self {
            h,
            w,
            d_in,
            d_out,
            cin,
            cout,
            kh,
            kw,
            kd,
            pt: (kh - 1) / 2,
            pl: (kw - 1) / 2,
            pf,
        })
    }

    /// Input depth feeding output depth `d_out` through kernel slice `z`.
    #[inline]
    fn src_depth(&self, d_out: usize, z: usize) -> Option<usize> {
        let d = (d_out + z).checked_sub(self.pf)?;
        (d < self.d_in).then_some(d)
    }

    #[inline]
    fn x_index(&self, h: usize, w: usize, d: usize, c: usize) -> usize {
        ((h * self.w + w) * self.d_in + d) * self.cin + c
    }

    #[inline]
    fn y_index(&self, h: usize, w: usize, d: usize, c: usize) -> usize {
        ((h * self.w + w) * self.d_out + d) * self.cout + c
    }

    #[inline]
    fn k_index(&self, i: usize, j: usize, z: usize, ci: usize, co: usize) -> usize {
        (((i * self.kw + j) * self.kd + z) * self.cin + ci) * self.cout + co
    }

    fn y_len(&self) -> usize {
        self.h * self.w * self.d_out * self.cout
    }

    fn x_len(&self) -> usize {
        self.h * self.w * self.d_in * self.cin
    }
}

/// Saved forward state needed by the backward pass.
pub enum ConvCache<T: Real> {
    Direct { x: Vec<T> },
    /// Input spectra indexed `d * cin + ci`.
    Fft { x_spec: Vec<Vec<Complex<T>>> },
}

/// Parameter-gradient accumulator for one plan; sum over any number of items.
pub struct ConvGrads<T: Real> {
    dw: Vec<T>,
    /// Kernel-gradient spectra indexed `(z * cin + ci) * cout + co`.
    dk_spec: Vec<Vec<Complex<T>>>,
    db: Vec<T>,
}

enum Engine<T: Real> {
    Direct,
    Fft {
        fft: Fft2<T>,
        /// Kernel spectra indexed `(z * cin + ci) * cout + co`.
        kernels: Vec<Vec<Complex<T>>>,
    },
}

/// A convolution bound to fixed weights and a fixed input shape.
pub struct ConvPlan<'a, T: Real> {
    g: Geometry,
    weight: &'a [T],
    bias: &'a [T],
    out_rank4: bool,
    engine: Engine<T>,
}

impl<'a, T: Real> ConvPlan<'a, T> {
    fn new(
        weight: &'a Tensor<T>,
        bias: &'a Tensor<T>,
        kernel: [usize; 5],
        depth: DepthPadding,
        engine: ConvEngine,
        x_dims: (usize, usize, usize, usize),
        out_rank4: bool,
    ) -> Result<Self, NnError> {
        let g = Geometry::new(x_dims, kernel, depth)?;
        if bias.len() != g.cout {
            return Err(shape_err("conv", format!("bias has {} values for {} filters", bias.len(), g.cout)));
        }
        let use_fft = match engine {
            ConvEngine::Direct => false,
            ConvEngine::Fft => true,
            ConvEngine::Auto => g.kh * g.kw >= FFT_MIN_TAPS,
        };
        let engine = if use_fft {
            let fft = Fft2::new(smooth_size(g.h + g.kh - 1, false), smooth_size(g.w + g.kw - 1, true));
            let kernels = kernel_spectra(&g, &fft, weight.data(), |i, j| {
                ((g.pt + fft.rows - i) % fft.rows, (g.pl + fft.cols - j) % fft.cols)
            });
            Engine::Fft { fft, kernels }
        } else {
            Engine::Direct
        };
        Ok(Self {
            g,
            weight: weight.data(),
            bias: bias.data(),
            out_rank4,
            engine,
        })
    }

    fn out_dims(&self) -> Vec<usize> {
        if self.out_rank4 {
            vec![self.g.h, self.g.w, self.g.d_out, self.g.cout]
        } else {
            vec![self.g.h, self.g.w, self.g.cout]
        }
    }

    pub fn new_grads(&self) -> ConvGrads<T> {
        let g = &self.g;
        let (dw, dk_spec) = match &self.engine {
            Engine::Direct => (vec![T::zero(); self.weight.len()], Vec::new()),
            Engine::Fft { fft, .. } => (
                Vec::new(),
                vec![vec![Complex::new(T::zero(), T::zero()); fft.spectrum_len()]; g.kd * g.cin * g.cout],
            ),
        };
        ConvGrads {
            dw,
            dk_spec,
            db: vec![T::zero(); g.cout],
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let g = &self.g;
        match x.hwdc() {
            Some((h, w, d, c)) if (h, w, d, c) == (g.h, g.w, g.d_in, g.cin) => Ok(()),
            _ => Err(shape_err(
                "conv",
                format!("plan built for {:?}, got {:?}", (g.h, g.w, g.d_in, g.cin), x.dims()),
            )),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>), NnError> {
        self.check_input(x)?;
        let g = &self.g;
        let xd = x.data();
        let (y, cache) = match &self.engine {
            Engine::Direct => (direct_forward(g, xd, self.weight, self.bias), ConvCache::Direct { x: xd.to_vec() }),
            Engine::Fft { fft, kernels } => {
                let x_spec = input_spectra(g, fft, xd, g.d_in, g.cin, |h, w, d, c| g.x_index(h, w, d, c));
                let mut y = vec![T::zero(); g.y_len()];
                let mut acc = vec![Complex::new(T::zero(), T::zero()); fft.spectrum_len()];
                for d in 0..g.d_out {
                    for co in 0..g.cout {
                        acc.iter_mut().for_each(|v| *v = Complex::new(T::zero(), T::zero()));
                        for z in 0..g.kd {
                            let Some(di) = g.src_depth(d, z) else { continue };
                            for ci in 0..g.cin {
                                mac(&mut acc, &x_spec[di * g.cin + ci], &kernels[(z * g.cin + ci) * g.cout + co]);
                            }
                        }
                        let b = self.bias[co];
                        fft.inverse(acc.clone(), 0..g.h, |r, vals| {
                            for (c, v) in vals[..g.w].iter().enumerate() {
                                y[g.y_index(r, c, d, co)] = *v + b;
                            }
                        });
                    }
                }
                (y, ConvCache::Fft { x_spec })
            }
        };
        Ok((Tensor::new(&self.out_dims(), y)?.debug_check("conv forward"), cache))
    }

    /// Accumulates parameter gradients into `grads` and, if `need_dx`,
    /// returns the input gradient.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        grads: &mut ConvGrads<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let g = &self.g;
        if dy.len() != g.y_len() {
            return Err(shape_err("conv backward", format!("dy has {} values, expected {}", dy.len(), g.y_len())));
        }
        let dyd = dy.data();
        for (i, v) in dyd.iter().enumerate() {
            let co = i % g.cout;
            grads.db[co] = grads.db[co] + *v;
        }
        let dx = match (&self.engine, cache) {
            (Engine::Direct, ConvCache::Direct { x }) => direct_backward(g, x, self.weight, dyd, &mut grads.dw, need_dx),
            (Engine::Fft { fft, kernels }, ConvCache::Fft { x_spec }) => {
                let dy_spec = input_spectra(g, fft, dyd, g.d_out, g.cout, |h, w, d, c| g.y_index(h, w, d, c));
                for z in 0..g.kd {
                    for d in 0..g.d_out {
                        let Some(di) = g.src_depth(d, z) else { continue };
                        for ci in 0..g.cin {
                            for co in 0..g.cout {
                                mac_conj(
                                    &mut grads.dk_spec[(z * g.cin + ci) * g.cout + co],
                                    &dy_spec[d * g.cout + co],
                                    &x_spec[di * g.cin + ci],
                                );
                            }
                        }
                    }
                }
                if need_dx {
                    let mut dx = vec![T::zero(); g.x_len()];
                    let mut acc = vec![Complex::new(T::zero(), T::zero()); fft.spectrum_len()];
                    for di in 0..g.d_in {
                        for ci in 0..g.cin {
                            acc.iter_mut().for_each(|v| *v = Complex::new(T::zero(), T::zero()));
                            for z in 0..g.kd {
                                let Some(d) = (di + g.pf).checked_sub(z).filter(|&d| d < g.d_out) else {
                                    continue;
                                };
                                for co in 0..g.cout {
                                    mac_conj(&mut acc, &dy_spec[d * g.cout + co], &kernels[(z * g.cin + ci) * g.cout + co]);
                                }
                            }
                            fft.inverse(acc.clone(), 0..g.h, |r, vals| {
                                for (c, v) in vals[..g.w].iter().enumerate() {
                                    dx[g.x_index(r, c, di, ci)] = *v;
                                }
                            });
                        }
                    }
                    Some(dx)
                } else {
                    None
                }
            }
            _ => return Err(shape_err("conv backward", "cache does not belong to this plan")),
        };
        let x_dims: Vec<usize> = if self.out_rank4 {
            vec![g.h, g.w, g.d_in, g.cin]
        } else {
            vec![g.h, g.w, g.cin]
        };
        dx.map(|d| Tensor::new(&x_dims, d).map(|t| t.debug_check("conv backward")))
            .transpose()
    }

    /// Converts accumulated gradients into `(d_weight, d_bias)` data vectors.
    pub fn finish(&self, grads: ConvGrads<T>) -> (Vec<T>, Vec<T>) {
        let g = &self.g;
        match &self.engine {
            Engine::Direct => (grads.dw, grads.db),
            Engine::Fft { fft, .. } => {
                let mut dw = vec![T::zero(); self.weight.len()];
                let tap_rows: Vec<usize> = (0..g.kh).map(|i| (g.pt + fft.rows - i) % fft.rows).collect();
                for (idx, spec) in grads.dk_spec.into_iter().enumerate() {
                    let co = idx % g.cout;
                    let ci = (idx / g.cout) % g.cin;
                    let z = idx / (g.cout * g.cin);
                    fft.inverse(spec, tap_rows.iter().copied(), |r, vals| {
                        let i = (g.pt + fft.rows - r) % fft.rows;
                        for j in 0..g.kw {
                            dw[g.k_index(i, j, z, ci, co)] = vals[(g.pl + fft.cols - j) % fft.cols];
                        }
                    });
                }
                (dw, grads.db)
            }
        }
    }
}

fn kernel_spectra<T: Real>(
    g: &Geometry,
    fft: &Fft2<T>,
    weight: &[T],
    place: impl Fn(usize, usize) -> (usize, usize),
) -> Vec<Vec<Complex<T>>> {
    let rows: Vec<usize> = (0..g.kh).map(|i| place(i, 0).0).collect();
    let mut out = Vec::with_capacity(g.kd * g.cin * g.cout);
    for z in 0..g.kd {
        for ci in 0..g.cin {
            for co in 0..g.cout {
                out.push(fft.forward(&rows, |r, buf| {
                    let i = rows.iter().position(|&x| x == r).expect("tap row");
                    for j in 0..g.kw {
                        buf[place(i, j).1] = weight[g.k_index(i, j, z, ci, co)];
                    }
                }));
            }
        }
    }
    out
}

/// Spectra of every `(d, c)` plane of an `(h, w, depth, chans)` array.
fn input_spectra<T: Real>(
    g: &Geometry,
    fft: &Fft2<T>,
    data: &[T],
    depth: usize,
    chans: usize,
    index: impl Fn(usize, usize, usize, usize) -> usize,
) -> Vec<Vec<Complex<T>>> {
    let rows: Vec<usize> = (0..g.h).collect();
    let mut out = Vec::with_capacity(depth * chans);
    for d in 0..depth {
        for c in 0..chans {
            out.push(fft.forward(&rows, |r, buf| {
                for (col, v) in buf[..g.w].iter_mut().enumerate() {
                    *v = data[index(r, col, d, c)];
                }
            }));
        }
    }
    out
}

fn direct_forward<T: Real>(g: &Geometry, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); g.y_len()];
    let block = g.d_out * g.cout;
    for ho in 0..g.h {
        for wo in 0..g.w {
            let base = g.y_index(ho, wo, 0, 0);
            let yv = &mut y[base..base + block];
            for d in 0..g.d_out {
                yv[d * g.cout..(d + 1) * g.cout].copy_from_slice(b);
            }
            for i in 0..g.kh {
                let Some(hi) = (ho + i).checked_sub(g.pt).filter(|&v| v < g.h) else { continue };
                for j in 0..g.kw {
                    let Some(wi) = (wo + j).checked_sub(g.pl).filter(|&v| v < g.w) else { continue };
                    for z in 0..g.kd {
                        let wbase = g.k_index(i, j, z, 0, 0);
                        for d in 0..g.d_out {
                            let Some(di) = g.src_depth(d, z) else { continue };
                            let xs = &x[g.x_index(hi, wi, di, 0)..][..g.cin];
                            let acc = &mut yv[d * g.cout..(d + 1) * g.cout];
                            for (ci, &xv) in xs.iter().enumerate() {
                                let wr = &w[wbase + ci * g.cout..][..g.cout];
                                for (a, &wv) in acc.iter_mut().zip(wr) {
                                    *a = *a + xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn direct_backward<T: Real>(g: &Geometry, x: &[T], w: &[T], dy: &[T], dw: &mut [T], need_dx: bool) -> Option<Vec<T>> {
    let mut dx = need_dx.then(|| vec![T::zero(); g.x_len()]);
    for ho in 0..g.h {
        for wo in 0..g.w {
            for i in 0..g.kh {
                let Some(hi) = (ho + i).checked_sub(g.pt).filter(|&v| v < g.h) else { continue };
                for j in 0..g.kw {
                    let Some(wi) = (wo + j).checked_sub(g.pl).filter(|&v| v < g.w) else { continue };
                    for z in 0..g.kd {
                        let wbase = g.k_index(i, j, z, 0, 0);
                        for d in 0..g.d_out {
                            let Some(di) = g.src_depth(d, z) else { continue };
                            let xb = g.x_index(hi, wi, di, 0);
                            let dyr = &dy[g.y_index(ho, wo, d, 0)..][..g.cout];
                            for ci in 0..g.cin {
                                let xv = x[xb + ci];
                                let wr = &w[wbase + ci * g.cout..][..g.cout];
                                let dwr = &mut dw[wbase + ci * g.cout..][..g.cout];
                                let mut s = T::zero();
                                for co in 0..g.cout {
                                    dwr[co] = dwr[co] + xv * dyr[co];
                                    s = s + wr[co] * dyr[co];
                                }
                                if let Some(dx) = dx.as_mut() {
                                    dx[xb + ci] = dx[xb + ci] + s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn glorot<T: Real, R: Rng>(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
    Tensor::new(dims, data).expect("dims match")
}

/// Volumetric convolution: input `(H, W, D, Cin)`, weight `(kh, kw, kd, Cin, Cout)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub depth_padding: DepthPadding,
    pub engine: ConvEngine,
}

impl<T: Real> Conv3d<T> {
    pub fn zeros(kernel: [usize; 5], depth_padding: DepthPadding) -> Self {
        Self {
            weight: Tensor::zeros(&kernel),
            bias: Tensor::zeros(&[kernel[4]]),
            depth_padding,
            engine: ConvEngine::Auto,
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(kernel: [usize; 5], depth_padding: DepthPadding, rng: &mut R) -> Self {
        let [kh, kw, kd, cin, cout] = kernel;
        let taps = kh * kw * kd;
        Self {
            weight: glorot(&kernel, taps * cin, taps * cout, rng),
            ..Self::zeros(kernel, depth_padding)
        }
    }

    pub fn kernel(&self) -> [usize; 5] {
        self.weight.dims().try_into().expect("rank-5 weight")
    }

    pub fn plan(&self, x_dims: &[usize]) -> Result<ConvPlan<'_, T>, NnError> {
        let &[h, w, d, c] = x_dims else {
            return Err(shape_err("conv3d", format!("expected (H, W, D, C) input, got {x_dims:?}")));
        };
        ConvPlan::new(&self.weight, &self.bias, self.kernel(), self.depth_padding, self.engine, (h, w, d, c), true)
    }
}

/// Planar convolution: input `(H, W, Cin)`, weight `(kh, kw, Cin, Cout)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub engine: ConvEngine,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(kernel: [usize; 4]) -> Self {
        Self {
            weight: Tensor::zeros(&kernel),
            bias: Tensor::zeros(&[kernel[3]]),
            engine: ConvEngine::Auto,
        }
    }

    pub fn glorot<R: Rng>(kernel: [usize; 4], rng: &mut R) -> Self {
        let [kh, kw, cin, cout] = kernel;
        Self {
            weight: glorot(&kernel, kh * kw * cin, kh * kw * cout, rng),
            ..Self::zeros(kernel)
        }
    }

    pub fn kernel(&self) -> [usize; 4] {
        self.weight.dims().try_into().expect("rank-4 weight")
    }

    pub fn plan(&self, x_dims: &[usize]) -> Result<ConvPlan<'_, T>, NnError> {
        let &[h, w, c] = x_dims else {
            return Err(shape_err("conv2d", format!("expected (H, W, C) input, got {x_dims:?}")));
        };
        let [kh, kw, cin, cout] = self.kernel();
        ConvPlan::new(
            &self.weight,
            &self.bias,
            [kh, kw, 1, cin, cout],
            DepthPadding::Same,
            self.engine,
            (h, w, 1, c),
            false,
        )
    }
}

fn layer_backward<T: Real>(
    plan: &ConvPlan<'_, T>,
    cache: &ConvCache<T>,
    dy: &Tensor<T>,
    w_dims: &[usize],
) -> Result<LayerGrads<T>, NnError> {
    let mut grads = plan.new_grads();
    let dx = plan.backward(cache, dy, &mut grads, true)?.expect("dx requested");
    let (dw, db) = plan.finish(grads);
    Ok(LayerGrads {
        d_input: dx,
        d_params: vec![Tensor::new(w_dims, dw)?, Tensor::new(&[db.len()], db)?],
    })
}

impl<T: Real> Layer<T> for Conv3d<T> {
    type Cache = (Vec<usize>, ConvCache<T>);

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache), NnError> {
        let (y, cache) = self.plan(x.dims())?.forward(x)?;
        Ok((y, (x.dims().to_vec(), cache)))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>) -> Result<LayerGrads<T>, NnError> {
        layer_backward(&self.plan(&cache.0)?, &cache.1, dy, self.weight.dims())
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    type Cache = (Vec<usize>, ConvCache<T>);

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache), NnError> {
        let (y, cache) = self.plan(x.dims())?.forward(x)?;
        Ok((y, (x.dims().to_vec(), cache)))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>) -> Result<LayerGrads<T>, NnError> {
        layer_backward(&self.plan(&cache.0)?, &cache.1, dy, self.weight.dims())
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
