use super::{shape_err, Layer, LayerGrads, NnError, Real, Tensor};

/// 2x2 spatial max-pooling with stride 2, applied per depth and channel.
///
/// Ties go to the first maximum in row-major scan order of the window, and
/// the whole upstream gradient is routed to that element.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaxPool;

/// Flat input index of the selected element for each output value.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    in_dims: Vec<usize>,
    argmax: Vec<usize>,
}

impl<T: Real> Layer<T> for MaxPool {
    type Cache = PoolCache;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache), NnError> {
        let (h, w, d, c) = x.hwdc().ok_or_else(|| shape_err("maxpool", format!("rank {}", x.rank())))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::OddSpatialDim(h, w));
        }
        let (ho, wo) = (h / 2, w / 2);
        let inner = d * c;
        let xd = x.data();
        let mut y = Vec::with_capacity(ho * wo * inner);
        let mut argmax = Vec::with_capacity(ho * wo * inner);
        for r in 0..ho {
            for col in 0..wo {
                for k in 0..inner {
                    let mut best = (2 * r * w + 2 * col) * inner + k;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * r + dr) * w + 2 * col + dc) * inner + k;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    y.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let mut dims = x.dims().to_vec();
        dims[0] = ho;
        dims[1] = wo;
        Ok((
            Tensor::new(&dims, y)?,
            PoolCache {
                in_dims: x.dims().to_vec(),
                argmax,
            },
        ))
    }

    fn backward(&self, cache: &PoolCache, dy: &Tensor<T>) -> Result<LayerGrads<T>, NnError> {
        if dy.len() != cache.argmax.len() {
            return Err(shape_err("maxpool backward", "gradient does not match pooled output"));
        }
        let mut dx = Tensor::zeros(&cache.in_dims);
        let dxd = dx.data_mut();
        for (&i, &g) in cache.argmax.iter().zip(dy.data()) {
            dxd[i] = dxd[i] + g;
        }
        Ok(LayerGrads {
            d_input: dx,
            d_params: Vec::new(),
        })
    }
}

/// `(H, W, 1, C)` to `(H, W, C)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SqueezeDepth;

pub fn squeeze_depth<T: Real>(x: Tensor<T>) -> Result<Tensor<T>, NnError> {
    match *x.dims() {
        [h, w, 1, c] => x.reshape(&[h, w, c]),
        [_, _, d, _] => Err(NnError::DepthNotOne(d)),
        _ => Err(shape_err("squeeze", format!("expected rank 4, got {:?}", x.dims()))),
    }
}

pub fn unsqueeze_depth<T: Real>(x: Tensor<T>) -> Result<Tensor<T>, NnError> {
    match *x.dims() {
        [h, w, c] => x.reshape(&[h, w, 1, c]),
        _ => Err(shape_err("unsqueeze", format!("expected rank 3, got {:?}", x.dims()))),
    }
}

impl<T: Real> Layer<T> for SqueezeDepth {
    type Cache = ();

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ()), NnError> {
        Ok((squeeze_depth(x.clone())?, ()))
    }

    fn backward(&self, _: &(), dy: &Tensor<T>) -> Result<LayerGrads<T>, NnError> {
        Ok(LayerGrads {
            d_input: unsqueeze_depth(dy.clone())?,
            d_params: Vec::new(),
        })
    }
}

/// Concatenates `(H, W, C_i)` tensors along channels, in argument order.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
    let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
    let (h, w) = match *first.dims() {
        [h, w, _] => (h, w),
        _ => return Err(shape_err("concat", format!("expected rank 3, got {:?}", first.dims()))),
    };
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        match *p.dims() {
            [ph, pw, c] if (ph, pw) == (h, w) => widths.push(c),
            _ => return Err(shape_err("concat", format!("{:?} does not stack on {:?}", p.dims(), first.dims()))),
        }
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(h * w * total);
    for px in 0..h * w {
        for (p, &c) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[px * c..(px + 1) * c]);
        }
    }
    Tensor::new(&[h, w, total], out)
}

/// Splits a channel gradient back into pieces of the given widths.
pub fn concat_channels_backward<T: Real>(dy: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>, NnError> {
    let (h, w, total) = match *dy.dims() {
        [h, w, c] => (h, w, c),
        _ => return Err(shape_err("concat backward", format!("expected rank 3, got {:?}", dy.dims()))),
    };
    if widths.iter().sum::<usize>() != total {
        return Err(shape_err("concat backward", format!("widths {widths:?} do not sum to {total}")));
    }
    let mut outs: Vec<Vec<T>> = widths.iter().map(|&c| Vec::with_capacity(h * w * c)).collect();
    for px in dy.data().chunks_exact(total) {
        let mut off = 0;
        for (o, &c) in outs.iter_mut().zip(widths) {
            o.extend_from_slice(&px[off..off + c]);
            off += c;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(o, &c)| Tensor::new(&[h, w, c], o))
        .collect()
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
    Tensor::new(x.dims(), data).expect("same dims")
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y.data().iter().zip(dy.data()).map(|(&s, &g)| g * s * (T::one() - s)).collect();
    Tensor::new(y.dims(), data).expect("same dims")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Sigmoid;

impl<T: Real> Layer<T> for Sigmoid {
    type Cache = Tensor<T>;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        let y = sigmoid(x);
        Ok((y.clone(), y))
    }

    fn backward(&self, y: &Tensor<T>, dy: &Tensor<T>) -> Result<LayerGrads<T>, NnError> {
        Ok(LayerGrads {
            d_input: sigmoid_backward(y, dy),
            d_params: Vec::new(),
        })
    }
}
