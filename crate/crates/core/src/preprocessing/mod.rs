//! Slice standardization, ROI extraction, denoising and the ILM-RPE position prior.
//!
//! The per-slice chain is: resize to 512x256, locate the retina from the row
//! profile, crop 250 rows around it, denoise the crop with total variation,
//! trace the ILM and RPE boundaries and fill the band between them.

mod layers;
mod roi;
mod tv;

pub use layers::{layers_mask, min_cost_path, segment_layers, LayerPath, RPE_MARGIN};
pub use roi::{
    extract_roi, locate_roi_center, resize_mask_nearest, standardize_slice, ROI_COLS, ROI_HALF,
    ROI_ROWS, STD_COLS, STD_ROWS,
};
pub use tv::{rof_energy, tv_denoise, tv_denoise_traced, TV_STEP};

use crate::volume_io::{Image2D, Mask2D};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("input must be at least 2x2, got {rows}x{cols}")]
    DegenerateInput { rows: usize, cols: usize },
    #[error("row profile is constant; cannot locate the retina")]
    FlatProfile,
    #[error("ROI center {0} outside [125, 386]")]
    CenterOutOfRange(usize),
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("no valid boundary path exists")]
    NoValidPath,
    #[error("ILM and RPE paths cross at column {0}")]
    CrossingPaths(usize),
    #[error("expected {expected:?} image, got {actual:?}")]
    DimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

/// Denoising settings for [`preprocess_slice`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    pub lambda: f64,
    pub iters: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            iters: 50,
        }
    }
}

/// A denoised 250x256 ROI together with its crop center and position prior.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSlice {
    pub image: Image2D,
    pub x0: usize,
    pub prior: Mask2D,
    pub ilm: LayerPath,
    pub rpe: LayerPath,
}

/// Runs the full per-slice preprocessing chain on a raw B-scan.
pub fn preprocess_slice(img: &Image2D, params: &PreprocessParams) -> Result<RoiSlice, PreprocessError> {
    let std = standardize_slice(img)?;
    let x0 = locate_roi_center(&std)?;
    let roi = extract_roi(&std, x0)?;
    let image = tv_denoise(&roi, params.lambda, params.iters)?;
    let (ilm, rpe) = segment_layers(&image)?;
    let prior = layers_mask(&ilm, &rpe, image.rows())?;
    Ok(RoiSlice {
        image,
        x0,
        prior,
        ilm,
        rpe,
    })
}
