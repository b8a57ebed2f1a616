//! Volume, slice and mask containers plus the OVF and PGM encoders.
//!
//! OVF layout (all little-endian):
//!
//! ```text
//! "OVF1" | u32 rows | u32 cols | u32 slices | u32 dtype (0=f32, 1=u8)
//!        | f32 spacing_x | f32 spacing_y | f32 spacing_z
//!        | payload: slice-major, row-major within a slice
//! ```

use thiserror::Error;

pub const OVF_MAGIC: &[u8; 4] = b"OVF1";
pub const OVF_HEADER_LEN: usize = 4 + 16 + 12;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("bad magic, expected \"OVF1\"")]
    BadMagic,
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("non-positive dimension in header ({rows}x{cols}x{slices})")]
    NonPositiveDim { rows: usize, cols: usize, slices: usize },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),
    #[error("value {value} at index {index} cannot be stored as u8")]
    ValueOutOfRange { index: usize, value: f32 },
    #[error("spacing must be positive, got {0:?}")]
    NonPositiveSpacing([f32; 3]),
    #[error("data length {actual} does not match dims (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("degenerate display range [{lo}, {hi}]")]
    DegenerateRange { lo: f32, hi: f32 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("mask values must be 0 or 1 (index {0})")]
    NotBinary(usize),
}

/// Storage type of an OVF payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::U8 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self, VolumeError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            other => Err(VolumeError::UnknownDtype(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// A single real-valued slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, VolumeError> {
        if data.len() != rows * cols {
            return Err(VolumeError::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A binary slice annotation; every value is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Mask2D {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, VolumeError> {
        if data.len() != rows * cols {
            return Err(VolumeError::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(VolumeError::NotBinary(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c) as u8);
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] != 0
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_image(&self) -> Image2D {
        Image2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// A 3D scalar field: `slices` B-scans of `rows` x `cols`, with voxel spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    rows: usize,
    cols: usize,
    slices: usize,
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        rows: usize,
        cols: usize,
        slices: usize,
        spacing: [f32; 3],
        data: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if rows == 0 || cols == 0 || slices == 0 {
            return Err(VolumeError::NonPositiveDim { rows, cols, slices });
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(VolumeError::NonPositiveSpacing(spacing));
        }
        let expected = rows * cols * slices;
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            slices,
            spacing,
            data,
        })
    }

    /// Stacks equally sized slices into a volume.
    pub fn from_slices(slices: &[Image2D], spacing: [f32; 3]) -> Result<Self, VolumeError> {
        let (rows, cols) = slices.first().map(|s| (s.rows, s.cols)).unwrap_or((0, 0));
        let mut data = Vec::with_capacity(rows * cols * slices.len());
        for s in slices {
            if s.rows != rows || s.cols != cols {
                return Err(VolumeError::LengthMismatch {
                    expected: rows * cols,
                    actual: s.rows * s.cols,
                });
            }
            data.extend_from_slice(&s.data);
        }
        Self::new(rows, cols, slices.len(), spacing, data)
    }

    pub fn from_masks(masks: &[Mask2D], spacing: [f32; 3]) -> Result<Self, VolumeError> {
        let images: Vec<Image2D> = masks.iter().map(Mask2D::to_image).collect();
        Self::from_slices(&images, spacing)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn slice(&self, z: usize) -> Image2D {
        let n = self.rows * self.cols;
        Image2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data[z * n..(z + 1) * n].to_vec(),
        }
    }

    /// Interprets slice `z` as a mask: any non-zero voxel is foreground.
    pub fn mask_slice(&self, z: usize) -> Mask2D {
        let n = self.rows * self.cols;
        Mask2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data[z * n..(z + 1) * n]
                .iter()
                .map(|&v| (v != 0.0) as u8)
                .collect(),
        }
    }

    pub fn slice_images(&self) -> Vec<Image2D> {
        (0..self.slices).map(|z| self.slice(z)).collect()
    }

    pub fn slice_masks(&self) -> Vec<Mask2D> {
        (0..self.slices).map(|z| self.mask_slice(z)).collect()
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an OVF byte stream.
pub fn read_volume(bytes: &[u8]) -> Result<Volume, VolumeError> {
    if bytes.len() < 4 || &bytes[..4] != OVF_MAGIC {
        return Err(VolumeError::BadMagic);
    }
    if bytes.len() < OVF_HEADER_LEN {
        return Err(VolumeError::TruncatedData {
            expected: OVF_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let rows = read_u32(bytes, 4) as usize;
    let cols = read_u32(bytes, 8) as usize;
    let slices = read_u32(bytes, 12) as usize;
    let dtype = Dtype::from_code(read_u32(bytes, 16))?;
    let spacing = [read_f32(bytes, 20), read_f32(bytes, 24), read_f32(bytes, 28)];
    if rows == 0 || cols == 0 || slices == 0 {
        return Err(VolumeError::NonPositiveDim { rows, cols, slices });
    }
    let count = rows * cols * slices;
    let payload = &bytes[OVF_HEADER_LEN..];
    let expected = count * dtype.width();
    if payload.len() != expected {
        return Err(VolumeError::TruncatedData {
            expected,
            actual: payload.len(),
        });
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::U8 => payload.iter().map(|&b| b as f32).collect(),
    };
    Volume::new(rows, cols, slices, spacing, data)
}

/// Encodes a volume as OVF. `u8` requires integral values in [0, 255].
pub fn write_volume(v: &Volume, dtype: Dtype) -> Result<Vec<u8>, VolumeError> {
    if dtype == Dtype::U8 {
        if let Some((index, &value)) = v
            .data
            .iter()
            .enumerate()
            .find(|(_, &x)| !(0.0..=255.0).contains(&x) || x.fract() != 0.0)
        {
            return Err(VolumeError::ValueOutOfRange { index, value });
        }
    }
    let mut out = Vec::with_capacity(OVF_HEADER_LEN + v.data.len() * dtype.width());
    out.extend_from_slice(OVF_MAGIC);
    for dim in [v.rows, v.cols, v.slices] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&dtype.code().to_le_bytes());
    for s in v.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => {
            for x in &v.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Dtype::U8 => out.extend(v.data.iter().map(|&x| x as u8)),
    }
    Ok(out)
}

/// Renders an image as binary 8-bit PGM, mapping `[lo, hi]` linearly onto `[0, 255]`.
pub fn export_pgm(img: &Image2D, lo: f32, hi: f32) -> Result<Vec<u8>, VolumeError> {
    if !(lo < hi) {
        return Err(VolumeError::DegenerateRange { lo, hi });
    }
    let header = format!("P5\n{} {}\n255\n", img.cols, img.rows);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    let span = hi - lo;
    out.extend(img.data.iter().map(|&v| {
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        (255.0 * t).round() as u8
    }));
    Ok(out)
}
