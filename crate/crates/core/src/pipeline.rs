//! Volume-level glue between the per-slice stages.

use crate::gmp::{cake, GmpCake, GmpError, GmpParams};
use crate::metrics::{central_mask, evaluate_volume, EvalMode, MetricError, VolumeScores};
use crate::model::{volume_samples, ModelError, SliceSample};
use crate::preprocessing::{
    preprocess_slice, resize_mask_nearest, PreprocessError, PreprocessParams, RoiSlice, ROI_HALF, ROI_ROWS, STD_COLS,
    STD_ROWS,
};
use crate::segmentation::{segment_slice, threshold_map, upsample_mask, SegError, SegParams};
use crate::volume_io::{Image2D, Mask2D, Volume};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("slice {z}: {source}")]
    Preprocess { z: usize, source: PreprocessError },
    #[error(transparent)]
    Gmp(#[from] GmpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{what}: {got} slices, expected {expected}")]
    SliceCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Applies `f` to every item on up to `jobs` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                let f = &f;
                s.spawn(move || part.iter().enumerate().map(|(i, t)| f(ci * chunk + i, t)).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Denoised ROIs, priors and cakes of every slice of one volume.
#[derive(Debug, Clone)]
pub struct PreparedVolume {
    pub rois: Vec<RoiSlice>,
    pub cakes: Vec<GmpCake>,
}

impl PreparedVolume {
    pub fn prepare(vol: &Volume, pre: &PreprocessParams, gmp: &GmpParams, jobs: usize) -> Result<Self, PipelineError> {
        let rois = par_map(&vol.slice_images(), jobs, |z, img| {
            preprocess_slice(img, pre).map_err(|source| PipelineError::Preprocess { z, source })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Self::from_rois(rois, gmp)
    }

    pub fn from_rois(rois: Vec<RoiSlice>, gmp: &GmpParams) -> Result<Self, PipelineError> {
        let cakes = rois
            .iter()
            .map(|r| cake(&r.image, &r.prior, gmp))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rois, cakes })
    }

    pub fn slices(&self) -> usize {
        self.rois.len()
    }

    /// Ground truth of the raw volume mapped into each slice's ROI.
    pub fn roi_ground_truth(&self, gt: &Volume) -> Result<Vec<Mask2D>, PipelineError> {
        if gt.slices() != self.slices() {
            return Err(PipelineError::SliceCount {
                what: "ground truth",
                expected: self.slices(),
                got: gt.slices(),
            });
        }
        Ok(gt
            .slice_masks()
            .iter()
            .zip(&self.rois)
            .map(|(m, r)| crop_to_roi(m, r.x0))
            .collect())
    }

    /// Network samples; `roi_gt`, when given, must come from [`Self::roi_ground_truth`].
    pub fn samples(&self, roi_gt: Option<&[Mask2D]>) -> Result<Vec<SliceSample>, PipelineError> {
        Ok(volume_samples(&self.cakes, roi_gt)?)
    }

    pub fn roi_volume(&self, spacing: [f32; 3]) -> Volume {
        let imgs: Vec<Image2D> = self.rois.iter().map(|r| r.image.clone()).collect();
        Volume::from_slices(&imgs, spacing).expect("consistent ROIs")
    }

    pub fn prior_volume(&self, spacing: [f32; 3]) -> Volume {
        let masks: Vec<Mask2D> = self.rois.iter().map(|r| r.prior.clone()).collect();
        Volume::from_masks(&masks, spacing).expect("consistent priors")
    }
}

/// Standardizes a mask to the working grid and crops the ROI rows around `x0`.
pub fn crop_to_roi(mask: &Mask2D, x0: usize) -> Mask2D {
    let std = if (mask.rows(), mask.cols()) == (STD_ROWS, STD_COLS) {
        mask.clone()
    } else {
        resize_mask_nearest(mask, STD_ROWS, STD_COLS)
    };
    let top = x0 - ROI_HALF;
    Mask2D::from_fn(ROI_ROWS, STD_COLS, |r, c| std.get(top + r, c))
}

/// Cyst masks of every slice, before and after intensity clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    /// Thresholded and upsampled probability maps.
    pub detected: Vec<Mask2D>,
    pub clustered: Vec<Mask2D>,
}

pub fn segment_volume(probs: &[Image2D], rois: &[RoiSlice], p: &SegParams) -> Result<Segmented, PipelineError> {
    if probs.len() != rois.len() {
        return Err(PipelineError::SliceCount {
            what: "probability maps",
            expected: rois.len(),
            got: probs.len(),
        });
    }
    let mut out = Segmented {
        detected: Vec::with_capacity(probs.len()),
        clustered: Vec::with_capacity(probs.len()),
    };
    for (prob, roi) in probs.iter().zip(rois) {
        out.detected.push(upsample_mask(&threshold_map(prob, p.threshold)));
        out.clustered.push(segment_slice(prob, &roi.image, p)?);
    }
    Ok(out)
}

/// Scores ROI-space predictions against ROI-space truth over all slices.
pub fn score_roi(pred: &[Mask2D], gt: &[Mask2D], spacing: [f32; 3], mode: EvalMode) -> Result<VolumeScores, PipelineError> {
    let annotated: Vec<usize> = (0..gt.len()).collect();
    let exclude = match mode {
        EvalMode::Unmasked => None,
        EvalMode::Masked { radius_mm } => {
            let (r, c) = gt.first().map_or((0, 0), |m| (m.rows(), m.cols()));
            Some(central_mask(r, c, gt.len(), spacing, radius_mm)?)
        }
    };
    Ok(evaluate_volume(pred, gt, &annotated, exclude.as_deref())?)
}
