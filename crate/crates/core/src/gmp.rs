//! Generalized motion patterns (GMPs) and direction cakes.
//!
//! A GMP translates an image along a direction `theta` by `j * delta` pixels
//! for `j = -N..=N` and reduces the `2N + 1` copies pixelwise with `min` or
//! `max`. A cake stacks the GMPs of `K` evenly spaced directions in
//! `[0, 180)` degrees together with the position prior.
//!
//! With `min`, dark structures are smeared along the motion direction while
//! bright structures narrower than the motion extent vanish; `max` does the
//! opposite.

use crate::volume_io::{Image2D, Mask2D};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GmpError {
    #[error("delta must be at least 1")]
    ZeroDelta,
    #[error("at least one direction is required")]
    NoDirections,
    #[error("prior is {prior:?}, image is {image:?}")]
    DimMismatch {
        image: (usize, usize),
        prior: (usize, usize),
    },
}

/// Pixelwise reducer applied to the translated stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coalesce {
    Min,
    Max,
}

impl Coalesce {
    #[inline]
    fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            Coalesce::Min => a.min(b),
            Coalesce::Max => a.max(b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Coalesce::Min => "min",
            Coalesce::Max => "max",
        }
    }
}

impl std::str::FromStr for Coalesce {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Coalesce::Min),
            "max" => Ok(Coalesce::Max),
            other => Err(format!("unknown coalescing function {other:?} (expected min or max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmpParams {
    /// Half extent of the translation: the stack holds `2n + 1` images.
    pub n: usize,
    /// Step size in pixels.
    pub delta: usize,
    /// Number of directions.
    pub k: usize,
    pub coalesce: Coalesce,
}

impl Default for GmpParams {
    fn default() -> Self {
        Self {
            n: 5,
            delta: 1,
            k: 8,
            coalesce: Coalesce::Min,
        }
    }
}

impl GmpParams {
    pub fn new(n: usize, delta: usize, k: usize, coalesce: Coalesce) -> Result<Self, GmpError> {
        let p = Self { n, delta, k, coalesce };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GmpError> {
        if self.delta == 0 {
            return Err(GmpError::ZeroDelta);
        }
        if self.k == 0 {
            return Err(GmpError::NoDirections);
        }
        Ok(())
    }

    /// Directions in degrees: `(k - 1) * 180 / K` for `k = 1..=K`.
    pub fn directions(&self) -> Vec<f64> {
        (0..self.k).map(|i| i as f64 * 180.0 / self.k as f64).collect()
    }
}

/// Integer offset `(dr, dc)` of stack member `j` for direction `theta`.
///
/// The motion vector is `(-sin theta, cos theta)` in (row, col) coordinates,
/// rounded once per `j`. Directions are folded into `[0, 180)` first so that
/// `theta` and `theta + 180` produce exactly mirrored offsets.
pub fn stack_offset(j: i64, delta: usize, theta_deg: f64) -> (i64, i64) {
    let mut t = theta_deg.rem_euclid(360.0);
    let mut sign = 1.0;
    if t >= 180.0 {
        t -= 180.0;
        sign = -1.0;
    }
    let rad = t.to_radians();
    let step = sign * (j * delta as i64) as f64;
    ((step * -rad.sin()).round() as i64, (step * rad.cos()).round() as i64)
}

/// `out(r, c) = img(r - dr, c - dc)` with edge replication outside the image.
pub fn translate(img: &Image2D, shift: (i64, i64)) -> Image2D {
    let (rows, cols) = (img.rows() as i64, img.cols() as i64);
    Image2D::from_fn(img.rows(), img.cols(), |r, c| {
        let sr = (r as i64 - shift.0).clamp(0, rows - 1) as usize;
        let sc = (c as i64 - shift.1).clamp(0, cols - 1) as usize;
        img.get(sr, sc)
    })
}

/// One GMP: the coalesced stack of `2N + 1` translated copies along `theta_deg`.
pub fn gmp(img: &Image2D, theta_deg: f64, p: &GmpParams) -> Image2D {
    let (rows, cols) = (img.rows(), img.cols());
    let mut out = img.data().to_vec();
    let src = img.data();
    let n = p.n as i64;
    for j in -n..=n {
        if j == 0 {
            continue;
        }
        let (dr, dc) = stack_offset(j, p.delta, theta_deg);
        for r in 0..rows {
            let sr = (r as i64 - dr).clamp(0, rows as i64 - 1) as usize;
            let src_row = &src[sr * cols..(sr + 1) * cols];
            let dst_row = &mut out[r * cols..(r + 1) * cols];
            for (c, d) in dst_row.iter_mut().enumerate() {
                let sc = (c as i64 - dc).clamp(0, cols as i64 - 1) as usize;
                *d = p.coalesce.apply(*d, src_row[sc]);
            }
        }
    }
    Image2D::new(rows, cols, out).expect("coalesced finite values")
}

/// K direction GMPs of one slice plus its position prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GmpCake {
    planes: Vec<Image2D>,
    prior: Mask2D,
    thetas: Vec<f64>,
}

impl GmpCake {
    pub fn from_parts(planes: Vec<Image2D>, prior: Mask2D, thetas: Vec<f64>) -> Result<Self, GmpError> {
        if planes.is_empty() {
            return Err(GmpError::NoDirections);
        }
        for p in &planes {
            if (p.rows(), p.cols()) != (prior.rows(), prior.cols()) {
                return Err(GmpError::DimMismatch {
                    image: (p.rows(), p.cols()),
                    prior: (prior.rows(), prior.cols()),
                });
            }
        }
        Ok(Self { planes, prior, thetas })
    }

    pub fn rows(&self) -> usize {
        self.prior.rows()
    }

    pub fn cols(&self) -> usize {
        self.prior.cols()
    }

    pub fn k(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Image2D] {
        &self.planes
    }

    pub fn prior(&self) -> &Mask2D {
        &self.prior
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
}

pub fn cake(img: &Image2D, prior: &Mask2D, p: &GmpParams) -> Result<GmpCake, GmpError> {
    p.validate()?;
    if (img.rows(), img.cols()) != (prior.rows(), prior.cols()) {
        return Err(GmpError::DimMismatch {
            image: (img.rows(), img.cols()),
            prior: (prior.rows(), prior.cols()),
        });
    }
    let thetas = p.directions();
    let planes = thetas.iter().map(|&t| gmp(img, t, p)).collect();
    Ok(GmpCake {
        planes,
        prior: prior.clone(),
        thetas,
    })
}

/// Plain pixelwise sum over the cake's planes.
pub fn sum_combine(c: &GmpCake) -> Image2D {
    let mut acc = vec![0.0f32; c.rows() * c.cols()];
    for plane in &c.planes {
        for (a, v) in acc.iter_mut().zip(plane.data()) {
            *a += v;
        }
    }
    Image2D::new(c.rows(), c.cols(), acc).expect("finite sum")
}
