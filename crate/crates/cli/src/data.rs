//! File plumbing shared by the subcommands.

use crate::config::Manifest;
use anyhow::{bail, Context, Result};
use octcyst::gmp::{cake, GmpCake, GmpParams};
use octcyst::model::SliceSample;
use octcyst::pipeline::par_map;
use octcyst::preprocessing::{STD_COLS, STD_ROWS};
use octcyst::volume_io::{read_volume, write_volume, Dtype, Image2D, Mask2D, Volume};
use std::path::{Path, PathBuf};

pub fn read_ovf(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_volume(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_ovf(path: &Path, v: &Volume, dtype: Dtype) -> Result<()> {
    let bytes = write_volume(v, dtype).with_context(|| format!("encoding {}", path.display()))?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `PREFIX_<suffix>.ovf`.
pub fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!("_{suffix}.ovf"));
    PathBuf::from(s)
}

/// File stem used as a volume identifier.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Voxel spacing once a raw volume has been resampled to the working grid.
pub fn standardized_spacing(raw: &Volume) -> [f32; 3] {
    let [sx, sy, sz] = raw.spacing();
    [
        sx * raw.rows() as f32 / STD_ROWS as f32,
        sy * raw.cols() as f32 / STD_COLS as f32,
        sz,
    ]
}

/// A preprocessed volume: ROI intensities, retinal prior and optional ROI truth.
pub struct Prepared {
    pub id: String,
    pub roi: Volume,
    pub prior: Volume,
    pub gt: Option<Volume>,
}

impl Prepared {
    pub fn load(prefix: &Path, with_gt: bool, manifest: &mut Manifest) -> Result<Self> {
        let roi_path = prefixed(prefix, "roi");
        let prior_path = prefixed(prefix, "prior");
        let roi = read_ovf(&roi_path)?;
        let prior = read_ovf(&prior_path)?;
        manifest.input(&roi_path)?;
        manifest.input(&prior_path)?;
        let dims = |v: &Volume| (v.rows(), v.cols(), v.slices());
        if dims(&roi) != dims(&prior) {
            bail!("{}: ROI {:?} and prior {:?} differ in size", prefix.display(), dims(&roi), dims(&prior));
        }
        let gt = if with_gt {
            let p = prefixed(prefix, "roigt");
            let gt = read_ovf(&p)?;
            manifest.input(&p)?;
            if dims(&gt) != dims(&roi) {
                bail!("{}: truth {:?} and ROI {:?} differ in size", prefix.display(), dims(&gt), dims(&roi));
            }
            Some(gt)
        } else {
            None
        };
        let id = prefix
            .file_name()
            .map_or_else(|| prefix.display().to_string(), |s| s.to_string_lossy().into_owned());
        Ok(Self { id, roi, prior, gt })
    }

    pub fn images(&self) -> Vec<Image2D> {
        self.roi.slice_images()
    }

    pub fn gt_masks(&self) -> Option<Vec<Mask2D>> {
        self.gt.as_ref().map(Volume::slice_masks)
    }

    pub fn cakes(&self, gmp: &GmpParams, jobs: usize) -> Result<Vec<GmpCake>> {
        let pairs: Vec<(Image2D, Mask2D)> = self.roi.slice_images().into_iter().zip(self.prior.slice_masks()).collect();
        let cakes = par_map(&pairs, jobs, |_, (img, prior)| cake(img, prior, gmp));
        Ok(cakes.into_iter().collect::<Result<Vec<_>, _>>()?)
    }

    /// Network samples, labelled when truth was loaded.
    pub fn samples(&self, gmp: &GmpParams, jobs: usize) -> Result<Vec<SliceSample>> {
        let cakes = self.cakes(gmp, jobs)?;
        let gt = self.gt_masks();
        Ok(octcyst::model::volume_samples(&cakes, gt.as_deref())?)
    }
}
