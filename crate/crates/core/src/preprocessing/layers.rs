//! ILM / RPE boundary tracing by column-wise dynamic programming.
//!
//! Boundaries are left-to-right paths with one row per column and row moves of
//! at most one between neighbouring columns. The ILM follows the strongest
//! dark-to-light transition (first bright row); the RPE follows the strongest
//! light-to-dark transition (last bright row) at least [`RPE_MARGIN`] rows
//! below the ILM.

use super::PreprocessError;
use crate::volume_io::{Image2D, Mask2D};

/// Minimum row gap between the ILM and the RPE search region.
pub const RPE_MARGIN: usize = 10;

/// One row index per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPath(Vec<usize>);

impl LayerPath {
    pub fn new(rows: Vec<usize>) -> Self {
        Self(rows)
    }

    pub fn rows(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every neighbouring pair differs by at most one row.
    pub fn is_connected(&self) -> bool {
        self.0.windows(2).all(|w| w[0].abs_diff(w[1]) <= 1)
    }
}

/// Minimum-cost left-to-right path through a row-major cost matrix with
/// moves in {-1, 0, +1}. Infinite costs are forbidden cells. Ties prefer a
/// straight move, then up, then down; the final row prefers the smallest index.
pub fn min_cost_path(cost: &[f64], rows: usize, cols: usize) -> Option<(Vec<usize>, f64)> {
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return None;
    }
    let at = |r: usize, c: usize| cost[r * cols + c];
    let mut acc = vec![f64::INFINITY; rows * cols];
    let mut from = vec![usize::MAX; rows * cols];
    for r in 0..rows {
        acc[r * cols] = at(r, 0);
    }
    for c in 1..cols {
        for r in 0..rows {
            let here = at(r, c);
            if here.is_infinite() {
                continue;
            }
            let mut best = (f64::INFINITY, usize::MAX);
            let candidates = [Some(r), r.checked_sub(1), (r + 1 < rows).then_some(r + 1)];
            for prev in candidates.into_iter().flatten() {
                let v = acc[prev * cols + c - 1];
                if v < best.0 {
                    best = (v, prev);
                }
            }
            if best.0.is_finite() {
                acc[r * cols + c] = best.0 + here;
                from[r * cols + c] = best.1;
            }
        }
    }
    let (mut row, total) = (0..rows)
        .map(|r| (r, acc[r * cols + cols - 1]))
        .fold((usize::MAX, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
    if !total.is_finite() {
        return None;
    }
    let mut path = vec![0; cols];
    for c in (0..cols).rev() {
        path[c] = row;
        if c > 0 {
            row = from[row * cols + c];
        }
    }
    Some((path, total))
}

/// Positive part of the vertical transition, normalized to [0, 1].
fn transition_cost(img: &Image2D, dark_to_light: bool) -> Vec<f64> {
    let (rows, cols) = (img.rows(), img.cols());
    let mut g = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = img.get(r, c) as f64;
            g[r * cols + c] = if dark_to_light {
                if r == 0 { 0.0 } else { (v - img.get(r - 1, c) as f64).max(0.0) }
            } else if r + 1 == rows {
                0.0
            } else {
                (v - img.get(r + 1, c) as f64).max(0.0)
            };
        }
    }
    let peak = g.iter().cloned().fold(0.0, f64::max);
    g.iter()
        .map(|&v| 1.0 - if peak > 0.0 { v / peak } else { 0.0 })
        .collect()
}

/// Traces the ILM and RPE on a denoised ROI.
pub fn segment_layers(img: &Image2D) -> Result<(LayerPath, LayerPath), PreprocessError> {
    let (rows, cols) = (img.rows(), img.cols());
    let ilm_cost = transition_cost(img, true);
    let (ilm, _) = min_cost_path(&ilm_cost, rows, cols).ok_or(PreprocessError::NoValidPath)?;

    let mut rpe_cost = transition_cost(img, false);
    for c in 0..cols {
        for r in 0..(ilm[c] + RPE_MARGIN).min(rows) {
            rpe_cost[r * cols + c] = f64::INFINITY;
        }
    }
    let (rpe, _) = min_cost_path(&rpe_cost, rows, cols).ok_or(PreprocessError::NoValidPath)?;
    Ok((LayerPath(ilm), LayerPath(rpe)))
}

/// Band mask: 1 on rows `ilm(c) ..= rpe(c)` of every column.
pub fn layers_mask(ilm: &LayerPath, rpe: &LayerPath, rows: usize) -> Result<Mask2D, PreprocessError> {
    assert_eq!(ilm.len(), rpe.len(), "paths must cover the same columns");
    if let Some(c) = (0..ilm.len()).find(|&c| ilm.0[c] >= rpe.0[c]) {
        return Err(PreprocessError::CrossingPaths(c));
    }
    Ok(Mask2D::from_fn(rows, ilm.len(), |r, c| ilm.0[c] <= r && r <= rpe.0[c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enumerate_min(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn walk(cost: &[f64], rows: usize, cols: usize, c: usize, r: usize, acc: f64, best: &mut f64) {
            let acc = acc + cost[r * cols + c];
            if c + 1 == cols {
                *best = best.min(acc);
                return;
            }
            for next in [r.wrapping_sub(1), r, r + 1] {
                if next < rows {
                    walk(cost, rows, cols, c + 1, next, acc, best);
                }
            }
        }
        let mut best = f64::INFINITY;
        for r in 0..rows {
            walk(cost, rows, cols, 0, r, 0.0, &mut best);
        }
        best
    }

    #[test]
    fn dp_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let cost: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (path, total) = min_cost_path(&cost, 10, 10).unwrap();
            let oracle = enumerate_min(&cost, 10, 10);
            assert!((total - oracle).abs() < 1e-12);
            let recomputed: f64 = path.iter().enumerate().map(|(c, &r)| cost[r * 10 + c]).sum();
            assert!((recomputed - total).abs() < 1e-12);
            assert!(LayerPath(path).is_connected());
        }
    }

    #[test]
    fn two_band_phantom() {
        let img = Image2D::from_fn(250, 256, |r, _| if (60..=200).contains(&r) { 0.8 } else { 0.1 });
        let (ilm, rpe) = segment_layers(&img).unwrap();
        assert!(ilm.rows().iter().all(|&r| r.abs_diff(60) <= 2));
        assert!(rpe.rows().iter().all(|&r| r.abs_diff(200) <= 2));
    }

    #[test]
    fn vertical_step_forces_margin() {
        let step = 40;
        let img = Image2D::from_fn(250, 64, |r, _| if r >= step { 1.0 } else { 0.0 });
        let (ilm, rpe) = segment_layers(&img).unwrap();
        assert!(ilm.rows().iter().all(|&r| r == step));
        assert!(rpe.rows().iter().all(|&r| r >= step + RPE_MARGIN));
    }

    #[test]
    fn tilted_band_is_followed() {
        let top = |c: usize| 50 + c / 4;
        let img = Image2D::from_fn(250, 256, |r, c| {
            if r >= top(c) && r <= top(c) + 100 { 0.9 } else { 0.1 }
        });
        let (ilm, rpe) = segment_layers(&img).unwrap();
        assert!(ilm.is_connected() && rpe.is_connected());
        for c in 0..256 {
            assert!(ilm.rows()[c].abs_diff(top(c)) <= 1, "col {c}");
            assert!(rpe.rows()[c].abs_diff(top(c) + 100) <= 1, "col {c}");
        }
    }

    #[test]
    fn no_room_for_rpe() {
        let img = Image2D::from_fn(12, 8, |r, _| if r >= 8 { 1.0 } else { 0.0 });
        assert_eq!(segment_layers(&img), Err(PreprocessError::NoValidPath));
    }

    #[test]
    fn band_mask_counts() {
        let m = layers_mask(&LayerPath(vec![10; 5]), &LayerPath(vec![20; 5]), 30).unwrap();
        assert_eq!(m.count(), 11 * 5);
        let m = layers_mask(&LayerPath(vec![7; 3]), &LayerPath(vec![8; 3]), 30).unwrap();
        assert_eq!(m.count(), 2 * 3);
        assert_eq!(
            layers_mask(&LayerPath(vec![5, 9]), &LayerPath(vec![8, 9]), 30),
            Err(PreprocessError::CrossingPaths(1))
        );
    }
}
