use super::PreprocessError;
use crate::volume_io::{Image2D, Mask2D};

pub const STD_ROWS: usize = 512;
pub const STD_COLS: usize = 256;
pub const ROI_ROWS: usize = 250;
pub const ROI_COLS: usize = 256;
/// Rows above the center row in the crop; the crop is `[x0 - 125, x0 + 124]`.
pub const ROI_HALF: usize = 125;

const X0_MIN: usize = ROI_HALF;
const X0_MAX: usize = STD_ROWS - ROI_ROWS + ROI_HALF - 1;

/// Source coordinate for `dst` under a corner-aligned grid.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len <= 1 {
        0.0
    } else {
        dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Bilinear resample to 512x256 with corner-aligned sampling, so an input that
/// is already 512x256 comes back unchanged.
pub fn standardize_slice(img: &Image2D) -> Result<Image2D, PreprocessError> {
    if img.rows() < 2 || img.cols() < 2 {
        return Err(PreprocessError::DegenerateInput {
            rows: img.rows(),
            cols: img.cols(),
        });
    }
    if img.rows() == STD_ROWS && img.cols() == STD_COLS {
        return Ok(img.clone());
    }
    let (lo, hi) = img.min_max();
    Ok(Image2D::from_fn(STD_ROWS, STD_COLS, |r, c| {
        let y = source_coord(r, img.rows(), STD_ROWS);
        let x = source_coord(c, img.cols(), STD_COLS);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(img.rows() - 1), (x0 + 1).min(img.cols() - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = img.get(y0, x0) as f64 * (1.0 - fx) + img.get(y0, x1) as f64 * fx;
        let bottom = img.get(y1, x0) as f64 * (1.0 - fx) + img.get(y1, x1) as f64 * fx;
        ((top * (1.0 - fy) + bottom * fy) as f32).clamp(lo, hi)
    }))
}

/// Nearest-neighbour resample of a mask onto the same grid as [`standardize_slice`].
pub fn resize_mask_nearest(mask: &Mask2D, rows: usize, cols: usize) -> Mask2D {
    if mask.rows() == rows && mask.cols() == cols {
        return mask.clone();
    }
    Mask2D::from_fn(rows, cols, |r, c| {
        let y = source_coord(r, mask.rows(), rows).round() as usize;
        let x = source_coord(c, mask.cols(), cols).round() as usize;
        mask.get(y.min(mask.rows() - 1), x.min(mask.cols() - 1))
    })
}

/// Row index of the retina center: intensity-weighted centroid of the
/// baseline-subtracted row profile, clamped so the 250-row crop fits.
///
/// The centroid is the least-squares mean of a Gaussian fitted to a unimodal
/// profile, so no iterative fit is needed.
pub fn locate_roi_center(img: &Image2D) -> Result<usize, PreprocessError> {
    let profile: Vec<f64> = (0..img.rows())
        .map(|r| (0..img.cols()).map(|c| img.get(r, c) as f64).sum())
        .collect();
    let floor = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut mass, mut moment) = (0.0, 0.0);
    for (r, p) in profile.iter().enumerate() {
        let w = p - floor;
        mass += w;
        moment += w * r as f64;
    }
    if !(mass > 0.0) {
        return Err(PreprocessError::FlatProfile);
    }
    let x0 = (moment / mass).round() as usize;
    Ok(x0.clamp(X0_MIN, X0_MAX))
}

/// Copies rows `[x0 - 125, x0 + 124]` of a standardized slice.
pub fn extract_roi(img: &Image2D, x0: usize) -> Result<Image2D, PreprocessError> {
    if !(X0_MIN..=X0_MAX).contains(&x0) {
        return Err(PreprocessError::CenterOutOfRange(x0));
    }
    if img.rows() != STD_ROWS || img.cols() != STD_COLS {
        return Err(PreprocessError::DimMismatch {
            expected: (STD_ROWS, STD_COLS),
            actual: (img.rows(), img.cols()),
        });
    }
    let start = (x0 - ROI_HALF) * img.cols();
    let data = img.data()[start..start + ROI_ROWS * img.cols()].to_vec();
    Ok(Image2D::new(ROI_ROWS, img.cols(), data).expect("finite input"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize() {
        let img = Image2D::from_fn(STD_ROWS, STD_COLS, |r, c| ((r * 7 + c * 3) % 11) as f32);
        assert_eq!(standardize_slice(&img).unwrap(), img);
    }

    #[test]
    fn constant_resize() {
        let img = Image2D::filled(37, 19, 0.25);
        let out = standardize_slice(&img).unwrap();
        assert_eq!((out.rows(), out.cols()), (STD_ROWS, STD_COLS));
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn ramp_resize_keeps_endpoints_and_linearity() {
        // f(r, c) = r + 2c on 1024x512; the resampled grid point (r, c) maps to
        // source (r * 1023/511, c * 511/255), so the output is that linear field.
        let img = Image2D::from_fn(1024, 512, |r, c| (r + 2 * c) as f32);
        let out = standardize_slice(&img).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(511, 255), 1023.0 + 2.0 * 511.0);
        for &(r, c) in &[(100usize, 30usize), (300, 200), (511, 0)] {
            let expect = r as f64 * 1023.0 / 511.0 + 2.0 * c as f64 * 511.0 / 255.0;
            assert!((out.get(r, c) as f64 - expect).abs() < 1e-3);
        }
    }

    #[test]
    fn tiny_inputs_are_rejected() {
        assert!(matches!(
            standardize_slice(&Image2D::filled(1, 10, 0.0)),
            Err(PreprocessError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn band_centroid() {
        let img = Image2D::from_fn(STD_ROWS, STD_COLS, |r, _| if (100..=150).contains(&r) { 1.0 } else { 0.0 });
        assert_eq!(locate_roi_center(&img).unwrap(), 125);
    }

    #[test]
    fn point_mass_is_clamped() {
        for (row, expect) in [(10, 125), (300, 300), (500, 386)] {
            let img = Image2D::from_fn(STD_ROWS, STD_COLS, |r, _| (r == row) as u8 as f32);
            assert_eq!(locate_roi_center(&img).unwrap(), expect);
        }
        assert_eq!(
            locate_roi_center(&Image2D::filled(STD_ROWS, STD_COLS, 3.0)),
            Err(PreprocessError::FlatProfile)
        );
    }

    #[test]
    fn crop_bounds() {
        let ramp = Image2D::from_fn(STD_ROWS, STD_COLS, |r, _| r as f32);
        let lo = extract_roi(&ramp, 125).unwrap();
        assert_eq!((lo.get(0, 0), lo.get(249, 0)), (0.0, 249.0));
        let hi = extract_roi(&ramp, 386).unwrap();
        assert_eq!((hi.get(0, 5), hi.get(249, 5)), (261.0, 510.0));
        let mid = extract_roi(&ramp, 256).unwrap();
        assert_eq!(mid.get(0, 0), 131.0);
        assert_eq!(extract_roi(&ramp, 124), Err(PreprocessError::CenterOutOfRange(124)));
        assert_eq!(extract_roi(&ramp, 387), Err(PreprocessError::CenterOutOfRange(387)));
    }

    #[test]
    fn mask_resize_nearest() {
        let m = Mask2D::from_fn(4, 4, |r, c| r == 0 && c == 0);
        let big = resize_mask_nearest(&m, 8, 8);
        assert!(big.get(0, 0) && big.get(1, 1));
        assert!(!big.get(7, 7));
    }
}
