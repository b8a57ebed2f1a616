//! From probability map to cyst mask: threshold, upsample to ROI resolution,
//! weight by ROI intensity and keep the darkest intensity clusters.

use crate::volume_io::{Image2D, Mask2D};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAX_KMEANS_ITERS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SegError {
    #[error("need at least {k} distinct values, got {distinct}")]
    TooFewDistinctValues { k: usize, distinct: usize },
    #[error("ROI is {roi:?}, expected twice the map size {map:?}")]
    DimMismatch { map: (usize, usize), roi: (usize, usize) },
    #[error("invalid segmentation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegParams {
    pub threshold: f64,
    pub k: usize,
    /// Number of lowest-mean clusters kept as cyst.
    pub retain: usize,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            threshold: 0.35,
            k: 3,
            retain: 1,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<(), SegError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(SegError::InvalidParams(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.k < 2 {
            return Err(SegError::InvalidParams(format!("k = {} < 2", self.k)));
        }
        if self.retain == 0 || self.retain >= self.k {
            return Err(SegError::InvalidParams(format!("retain = {} outside [1, {})", self.retain, self.k)));
        }
        Ok(())
    }
}

/// `prob >= t`
pub fn threshold_map(prob: &Image2D, t: f64) -> Mask2D {
    Mask2D::from_fn(prob.rows(), prob.cols(), |r, c| prob.get(r, c) as f64 >= t)
}

/// Nearest-neighbour 2x enlargement.
pub fn upsample_mask(m: &Mask2D) -> Mask2D {
    Mask2D::from_fn(m.rows() * 2, m.cols() * 2, |r, c| m.get(r / 2, c / 2))
}

/// Result of 1-D k-means. Clusters are numbered by ascending mean.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub means: Vec<f64>,
    /// Center updates performed.
    pub iterations: usize,
    /// Within-cluster SSE after each pass.
    pub sse_trace: Vec<f64>,
}

impl KMeans {
    pub fn sse(&self) -> f64 {
        *self.sse_trace.last().expect("at least one pass")
    }
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Lloyd's algorithm started from the `(2i + 1) / 2k` quantiles.
pub fn kmeans(values: &[f64], k: usize) -> Result<KMeans, SegError> {
    let distinct = distinct_count(values);
    if k == 0 || distinct < k {
        return Err(SegError::TooFewDistinctValues { k, distinct });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let init = (0..k).map(|i| sorted[((2 * i + 1) * n / (2 * k)).min(n - 1)]).collect();
    Ok(lloyd(values, init))
}

/// Best of `restarts` runs started from distinct random data points.
pub fn kmeans_random_restarts(values: &[f64], k: usize, restarts: usize, seed: u64) -> Result<KMeans, SegError> {
    let mut pool = values.to_vec();
    pool.sort_by(f64::total_cmp);
    pool.dedup();
    if k == 0 || pool.len() < k {
        return Err(SegError::TooFewDistinctValues { k, distinct: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let init = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        let run = lloyd(values, init);
        if best.as_ref().map_or(true, |b| run.sse() < b.sse()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn nearest(v: f64, centers: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate().skip(1) {
        if (v - c).abs() < (v - centers[best]).abs() {
            best = i;
        }
    }
    best
}

fn lloyd(values: &[f64], mut centers: Vec<f64>) -> KMeans {
    let k = centers.len();
    let assign = |centers: &[f64]| -> Vec<usize> { values.iter().map(|&v| nearest(v, centers)).collect() };
    let mut labels = assign(&centers);
    let mut sse_trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_KMEANS_ITERS {
        iterations += 1;
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&l, &v) in labels.iter().zip(values) {
            sum[l] += v;
            count[l] += 1;
        }
        for i in 0..k {
            // An emptied cluster keeps its previous center.
            if count[i] > 0 {
                centers[i] = sum[i] / count[i] as f64;
            }
        }
        sse_trace.push(labels.iter().zip(values).map(|(&l, &v)| (v - centers[l]).powi(2)).sum());
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    KMeans {
        labels: labels.into_iter().map(|l| rank[l]).collect(),
        means: order.iter().map(|&c| centers[c]).collect(),
        iterations,
        sse_trace,
    }
}

/// Full post-processing of one slice. `roi` must be twice the map size.
///
/// Pixels of the upsampled detection are clustered by ROI intensity and the
/// `retain` darkest clusters are kept. With fewer than `k` distinct
/// intensities the detected values themselves act as clusters.
pub fn segment_slice(prob: &Image2D, roi: &Image2D, p: &SegParams) -> Result<Mask2D, SegError> {
    p.validate()?;
    if (roi.rows(), roi.cols()) != (prob.rows() * 2, prob.cols() * 2) {
        return Err(SegError::DimMismatch {
            map: (prob.rows(), prob.cols()),
            roi: (roi.rows(), roi.cols()),
        });
    }
    let detected = upsample_mask(&threshold_map(prob, p.threshold));
    let idx: Vec<usize> = detected.data().iter().enumerate().filter(|(_, &m)| m != 0).map(|(i, _)| i).collect();
    let values: Vec<f64> = idx.iter().map(|&i| roi.data()[i] as f64).collect();
    let keep: Vec<bool> = match kmeans(&values, p.k) {
        Ok(km) => km.labels.iter().map(|&l| l < p.retain).collect(),
        Err(SegError::TooFewDistinctValues { distinct, .. }) => {
            let mut levels = values.clone();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let cut = levels.get(p.retain.min(distinct).saturating_sub(1)).copied().unwrap_or(f64::NEG_INFINITY);
            values.iter().map(|&v| v <= cut).collect()
        }
        Err(e) => return Err(e),
    };
    let mut out = vec![0u8; roi.rows() * roi.cols()];
    for (&i, &k) in idx.iter().zip(&keep) {
        out[i] = k as u8;
    }
    Ok(Mask2D::new(roi.rows(), roi.cols(), out).expect("binary"))
}
