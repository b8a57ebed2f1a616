//! 2D real FFT on zero-padded planes.
//!
//! Spectra are stored column-major over the half spectrum: `half` blocks of
//! `rows` complex values, which lets the column transforms run as one batched
//! call. Only pointwise products are ever taken between spectra, so the
//! transposed layout never needs to be undone.

use super::Real;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Smallest `n >= min` whose only prime factors are 2, 3 and 5, optionally even.
pub(crate) fn smooth_size(min: usize, even: bool) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 && (!even || n % 2 == 0) {
            return n;
        }
        n += 1;
    }
}

pub(crate) struct Fft2<T: Real> {
    pub rows: usize,
    pub cols: usize,
    pub half: usize,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    /// `cols` must be even.
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(cols % 2 == 0, "real FFT width must be even");
        let mut real = RealFftPlanner::<T>::new();
        let mut complex = FftPlanner::<T>::new();
        Self {
            rows,
            cols,
            half: cols / 2 + 1,
            r2c: real.plan_fft_forward(cols),
            c2r: real.plan_fft_inverse(cols),
            col_fwd: complex.plan_fft_forward(rows),
            col_inv: complex.plan_fft_inverse(rows),
        }
    }

    pub fn spectrum_len(&self) -> usize {
        self.rows * self.half
    }

    /// Transforms a plane given as its non-zero rows; `fill(row, buf)` writes
    /// row `row` into a zeroed buffer of `cols` values.
    pub fn forward(&self, nonzero_rows: &[usize], mut fill: impl FnMut(usize, &mut [T])) -> Vec<Complex<T>> {
        let mut spec = vec![Complex::new(T::zero(), T::zero()); self.spectrum_len()];
        let mut buf = vec![T::zero(); self.cols];
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.half];
        for &r in nonzero_rows {
            buf.iter_mut().for_each(|v| *v = T::zero());
            fill(r, &mut buf);
            self.r2c.process(&mut buf, &mut out).expect("r2c length");
            for (k, v) in out.iter().enumerate() {
                spec[k * self.rows + r] = *v;
            }
        }
        self.col_fwd.process(&mut spec);
        spec
    }

    /// Inverts a spectrum (scaled so forward then inverse is the identity) and
    /// hands each requested row to `sink(row, values)`.
    pub fn inverse(
        &self,
        mut spec: Vec<Complex<T>>,
        rows: impl IntoIterator<Item = usize>,
        mut sink: impl FnMut(usize, &[T]),
    ) {
        self.col_inv.process(&mut spec);
        let scale = T::one() / T::of((self.rows * self.cols) as f64);
        let mut row_spec = vec![Complex::new(T::zero(), T::zero()); self.half];
        let mut out = vec![T::zero(); self.cols];
        for r in rows {
            for (k, v) in row_spec.iter_mut().enumerate() {
                *v = spec[k * self.rows + r];
            }
            // DC and Nyquist bins of a real row are real; drop rounding residue.
            row_spec[0].im = T::zero();
            row_spec[self.half - 1].im = T::zero();
            self.c2r.process(&mut row_spec, &mut out).expect("c2r length");
            out.iter_mut().for_each(|v| *v = *v * scale);
            sink(r, &out);
        }
    }
}

/// `acc += a * b`
#[inline]
pub(crate) fn mac<T: Real>(acc: &mut [Complex<T>], a: &[Complex<T>], b: &[Complex<T>]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        o.re = o.re + x.re * y.re - x.im * y.im;
        o.im = o.im + x.re * y.im + x.im * y.re;
    }
}

/// `acc += a * conj(b)`
#[inline]
pub(crate) fn mac_conj<T: Real>(acc: &mut [Complex<T>], a: &[Complex<T>], b: &[Complex<T>]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        o.re = o.re + x.re * y.re + x.im * y.im;
        o.im = o.im + x.im * y.re - x.re * y.im;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(149, false), 150);
        assert_eq!(smooth_size(152, true), 160);
        assert_eq!(smooth_size(259, false), 270);
        assert_eq!(smooth_size(7, true), 8);
    }

    #[test]
    fn round_trip() {
        let fft = Fft2::<f64>::new(6, 8);
        let plane: Vec<f64> = (0..48).map(|i| (i * 37 % 11) as f64 - 5.0).collect();
        let rows: Vec<usize> = (0..6).collect();
        let spec = fft.forward(&rows, |r, buf| buf.copy_from_slice(&plane[r * 8..r * 8 + 8]));
        let mut back = vec![0.0; 48];
        fft.inverse(spec, 0..6, |r, vals| back[r * 8..r * 8 + 8].copy_from_slice(vals));
        for (a, b) in back.iter().zip(&plane) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
