//! Total-variation (ROF) denoising by Chambolle's dual projection.
//!
//! Minimizes `E(u) = sum |grad u| + 1/(2 lambda) * sum (u - f)^2` with forward
//! differences and Neumann boundaries. Each iterate is clipped to the input
//! range; clipping is 1-Lipschitz and pulls every pixel towards `f`, so it
//! never raises either term of the energy.

use super::PreprocessError;
use crate::volume_io::Image2D;

/// Dual step size.
pub const TV_STEP: f64 = 0.25;

struct Field {
    rows: usize,
    cols: usize,
}

impl Field {
    fn grad(&self, u: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        let (rows, cols) = (self.rows, self.cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                gx[i] = if c + 1 < cols { u[i + 1] - u[i] } else { 0.0 };
                gy[i] = if r + 1 < rows { u[i + cols] - u[i] } else { 0.0 };
            }
        }
    }

    /// Negative adjoint of `grad`.
    fn div(&self, px: &[f64], py: &[f64], out: &mut [f64]) {
        let (rows, cols) = (self.rows, self.cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let dx = if cols == 1 {
                    0.0
                } else if c == 0 {
                    px[i]
                } else if c + 1 == cols {
                    -px[i - 1]
                } else {
                    px[i] - px[i - 1]
                };
                let dy = if rows == 1 {
                    0.0
                } else if r == 0 {
                    py[i]
                } else if r + 1 == rows {
                    -py[i - cols]
                } else {
                    py[i] - py[i - cols]
                };
                out[i] = dx + dy;
            }
        }
    }
}

fn energy(field: &Field, u: &[f64], f: &[f64], lambda: f64) -> f64 {
    let n = u.len();
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    field.grad(u, &mut gx, &mut gy);
    let tv: f64 = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum();
    let fid: f64 = u.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
    tv + fid / (2.0 * lambda)
}

/// ROF energy of `u` with respect to the noisy observation `f`.
pub fn rof_energy(u: &Image2D, f: &Image2D, lambda: f64) -> f64 {
    let field = Field {
        rows: u.rows(),
        cols: u.cols(),
    };
    let u: Vec<f64> = u.data().iter().map(|&v| v as f64).collect();
    let f: Vec<f64> = f.data().iter().map(|&v| v as f64).collect();
    energy(&field, &u, &f, lambda)
}

pub fn tv_denoise(img: &Image2D, lambda: f64, iters: usize) -> Result<Image2D, PreprocessError> {
    tv_denoise_traced(img, lambda, iters).map(|(u, _)| u)
}

/// Like [`tv_denoise`], also returning the energy of the input followed by
/// the energy after each iteration.
pub fn tv_denoise_traced(
    img: &Image2D,
    lambda: f64,
    iters: usize,
) -> Result<(Image2D, Vec<f64>), PreprocessError> {
    if !(lambda > 0.0) {
        return Err(PreprocessError::NonPositiveLambda(lambda));
    }
    if iters == 0 {
        return Err(PreprocessError::ZeroIterations);
    }
    let field = Field {
        rows: img.rows(),
        cols: img.cols(),
    };
    let n = img.data().len();
    let f: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let (lo, hi) = img.min_max();
    let (lo, hi) = (lo as f64, hi as f64);

    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut div = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut u = f.clone();
    let mut energies = Vec::with_capacity(iters + 1);
    energies.push(energy(&field, &u, &f, lambda));

    for _ in 0..iters {
        field.div(&px, &py, &mut div);
        for i in 0..n {
            work[i] = div[i] - f[i] / lambda;
        }
        field.grad(&work, &mut gx, &mut gy);
        for i in 0..n {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + TV_STEP * norm;
            px[i] = (px[i] + TV_STEP * gx[i]) / denom;
            py[i] = (py[i] + TV_STEP * gy[i]) / denom;
        }
        field.div(&px, &py, &mut div);
        for i in 0..n {
            u[i] = (f[i] - lambda * div[i]).clamp(lo, hi);
        }
        energies.push(energy(&field, &u, &f, lambda));
    }
    let out = Image2D::new(img.rows(), img.cols(), u.iter().map(|&v| v as f32).collect())
        .expect("finite iterate");
    Ok((out, energies))
}
