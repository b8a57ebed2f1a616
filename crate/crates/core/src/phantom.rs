//! Synthetic OCT-like volumes with exact cyst ground truth.
//!
//! A slice is a stack of horizontal retinal bands whose top edge (the ILM)
//! follows a sinusoid. Dark ellipsoidal cysts sit between the ILM and the
//! RPE, small bright drusen sit in the outer nuclear layer, and the whole
//! volume is multiplied by mean-one gamma speckle.

use crate::preprocessing::LayerPath;
use crate::volume_io::{Image2D, Mask2D, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

/// Bands as `(start, end, intensity)` in rows below the ILM for a 512-row
/// slice; other heights scale the offsets proportionally.
pub const LAYERS: [(usize, usize, f32); 6] = [
    (0, 14, 0.85),    // nerve fibre layer
    (14, 44, 0.5),    // ganglion cell layer
    (44, 62, 0.3),    // inner nuclear layer
    (62, 74, 0.55),   // outer plexiform layer
    (74, 112, 0.3),   // outer nuclear layer
    (112, 124, 0.95), // retinal pigment epithelium
];
pub const VITREOUS: f32 = 0.02;
pub const CHOROID: f32 = 0.15;
/// Choroid thickness below the RPE for a 512-row slice.
const CHOROID_ROWS: usize = 40;
pub const MAX_CURVATURE: f64 = 10.0;
pub const MAX_ATTEMPTS: usize = 100;

const STREAM_LAYOUT: u64 = 0;
const STREAM_CYSTS: u64 = 1;
const STREAM_DRUSEN: u64 = 2;
const STREAM_SPECKLE: u64 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("phantom must be at least 64x64x1, got {0:?}")]
    TooSmall((usize, usize, usize)),
    #[error("could not place {what} {index} after {MAX_ATTEMPTS} attempts")]
    PlacementFailure { what: &'static str, index: usize },
    #[error("invalid phantom parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub rows: usize,
    pub cols: usize,
    pub slices: usize,
    /// mm per voxel along (row, col, slice).
    pub spacing: [f32; 3],
    /// Peak ILM excursion in rows, at most [`MAX_CURVATURE`].
    pub curvature: f64,
    pub cysts: usize,
    /// In-plane cyst radius range in pixels.
    pub cyst_radius: (f64, f64),
    /// Cyst half-extent range in slices.
    pub cyst_depth: (f64, f64),
    pub cyst_intensity: f32,
    pub drusen: usize,
    pub drusen_radius: (f64, f64),
    pub drusen_intensity: f32,
    /// Standard deviation of the mean-one speckle; 0 disables it.
    pub speckle: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            rows: 512,
            cols: 256,
            slices: 8,
            spacing: [0.01, 0.01, 0.25],
            curvature: 8.0,
            cysts: 5,
            cyst_radius: (3.0, 25.0),
            cyst_depth: (0.5, 2.0),
            cyst_intensity: 0.05,
            drusen: 3,
            drusen_radius: (2.0, 4.0),
            drusen_intensity: 0.95,
            speckle: 0.3,
            seed: 0,
        }
    }
}

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, r: usize, c: usize, z: usize) -> bool {
        let d = |i: usize, v: usize| (v as f64 - self.center[i]) / self.radii[i];
        d(0, r).powi(2) + d(1, c).powi(2) + d(2, z).powi(2) <= 1.0
    }

    /// Voxels inside the ellipsoid, clipped to the volume.
    pub fn voxels(&self, rows: usize, cols: usize, slices: usize) -> Vec<(usize, usize, usize)> {
        let range = |i: usize, n: usize| {
            let lo = (self.center[i] - self.radii[i]).floor().max(0.0) as usize;
            let hi = ((self.center[i] + self.radii[i]).ceil().max(0.0) as usize).min(n.saturating_sub(1));
            lo..=hi
        };
        let mut out = Vec::new();
        for z in range(2, slices) {
            for r in range(0, rows) {
                for c in range(1, cols) {
                    if self.contains(r, c, z) {
                        out.push((r, c, z));
                    }
                }
            }
        }
        out
    }
}

/// A generated volume and everything known about it.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume,
    /// Cyst voxels as 0/1.
    pub gt: Volume,
    /// Per slice: first row of the retina in every column.
    pub ilm: Vec<LayerPath>,
    /// Per slice: last row of the RPE band in every column.
    pub rpe: Vec<LayerPath>,
    pub cysts: Vec<Ellipsoid>,
    pub drusen: Vec<Ellipsoid>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn scaled(offset: usize, rows: usize) -> usize {
    (offset as f64 * rows as f64 / 512.0).round() as usize
}

impl PhantomParams {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.rows < 64 || self.cols < 64 || self.slices == 0 {
            return Err(PhantomError::TooSmall((self.rows, self.cols, self.slices)));
        }
        let bad = |m: String| Err(PhantomError::InvalidParams(m));
        if !(0.0..=MAX_CURVATURE).contains(&self.curvature) {
            return bad(format!("curvature {} outside [0, {MAX_CURVATURE}]", self.curvature));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("spacing {:?} must be positive", self.spacing));
        }
        for (name, (lo, hi)) in [
            ("cyst radius", self.cyst_radius),
            ("cyst depth", self.cyst_depth),
            ("drusen radius", self.drusen_radius),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("{name} range ({lo}, {hi}) is empty or non-positive"));
            }
        }
        if !(self.speckle >= 0.0 && self.speckle.is_finite()) {
            return bad(format!("speckle {} must be non-negative", self.speckle));
        }
        Ok(())
    }

    /// Rows below the ILM of band `i`.
    fn band(&self, i: usize) -> (usize, usize) {
        (scaled(LAYERS[i].0, self.rows), scaled(LAYERS[i].1, self.rows))
    }
}

/// Layered, noise-free background of one slice.
fn background(p: &PhantomParams, ilm: &[usize]) -> Image2D {
    let bands: Vec<(usize, usize, f32)> = (0..LAYERS.len())
        .map(|i| {
            let (a, b) = p.band(i);
            (a, b, LAYERS[i].2)
        })
        .collect();
    let retina_end = bands[bands.len() - 1].1;
    let choroid_end = retina_end + scaled(CHOROID_ROWS, p.rows);
    Image2D::from_fn(p.rows, p.cols, |r, c| {
        let Some(d) = r.checked_sub(ilm[c]) else {
            return VITREOUS;
        };
        if let Some(&(_, _, v)) = bands.iter().find(|(a, b, _)| (*a..*b).contains(&d)) {
            v
        } else if d < choroid_end {
            CHOROID
        } else {
            VITREOUS
        }
    })
}

pub fn generate_phantom(p: &PhantomParams) -> Result<Phantom, PhantomError> {
    p.validate()?;
    let (rows, cols, slices) = (p.rows, p.cols, p.slices);

    let mut layout = stream(p.seed, STREAM_LAYOUT);
    let base = rows as f64 * layout.gen_range(0.34..0.40);
    let period = cols as f64 * layout.gen_range(1.0..2.0);
    let phase = layout.gen_range(0.0..std::f64::consts::TAU);
    let drift = layout.gen_range(-0.2..0.2);
    let ilm_rows: Vec<Vec<usize>> = (0..slices)
        .map(|z| {
            (0..cols)
                .map(|c| {
                    let t = std::f64::consts::TAU * c as f64 / period + phase + drift * z as f64;
                    (base + p.curvature * t.sin()).round() as usize
                })
                .collect()
        })
        .collect();
    let rpe_end = p.band(LAYERS.len() - 1).1;
    let ilm: Vec<LayerPath> = ilm_rows.iter().map(|r| LayerPath::new(r.clone())).collect();
    let rpe: Vec<LayerPath> = ilm_rows
        .iter()
        .map(|r| LayerPath::new(r.iter().map(|&v| v + rpe_end - 1).collect()))
        .collect();

    let mut cyst_map = vec![false; rows * cols * slices];
    let idx = |r: usize, c: usize, z: usize| (z * rows + r) * cols + c;

    // Cysts sit below the nerve fibre layer and above the RPE.
    let cyst_band = (p.band(1).0, p.band(4).1);
    let mut rng = stream(p.seed, STREAM_CYSTS);
    let mut cysts = Vec::with_capacity(p.cysts);
    for i in 0..p.cysts {
        let max_rr = ((cyst_band.1 - cyst_band.0) as f64 / 2.0 - 1.0).min(p.cyst_radius.1);
        let placed = (0..MAX_ATTEMPTS).find_map(|_| {
            let rr = rng.gen_range(p.cyst_radius.0..=max_rr.max(p.cyst_radius.0));
            let rc = rng.gen_range(p.cyst_radius.0..=p.cyst_radius.1);
            let rz = rng.gen_range(p.cyst_depth.0..=p.cyst_depth.1);
            let c0 = rng.gen_range(rc..=(cols as f64 - 1.0 - rc).max(rc));
            let z0 = rng.gen_range(0..slices) as f64;
            let ilm0 = ilm_rows[z0 as usize][c0.round() as usize] as f64;
            let r0 = ilm0 + rng.gen_range(cyst_band.0 as f64 + rr..=(cyst_band.1 as f64 - rr).max(cyst_band.0 as f64 + rr));
            let e = Ellipsoid {
                center: [r0, c0, z0],
                radii: [rr, rc, rz],
            };
            let vox = e.voxels(rows, cols, slices);
            let fits = !vox.is_empty()
                && vox.iter().all(|&(r, c, z)| {
                    let d = r as i64 - ilm_rows[z][c] as i64;
                    d >= cyst_band.0 as i64 && d < cyst_band.1 as i64 && !cyst_map[idx(r, c, z)]
                });
            fits.then_some((e, vox))
        });
        let (e, vox) = placed.ok_or(PhantomError::PlacementFailure { what: "cyst", index: i })?;
        for (r, c, z) in vox {
            cyst_map[idx(r, c, z)] = true;
        }
        cysts.push(e);
    }

    let onl = p.band(4);
    let mut rng = stream(p.seed, STREAM_DRUSEN);
    let mut drusen_map = vec![false; rows * cols * slices];
    let mut drusen = Vec::with_capacity(p.drusen);
    for i in 0..p.drusen {
        let placed = (0..MAX_ATTEMPTS).find_map(|_| {
            let rad = rng.gen_range(p.drusen_radius.0..=p.drusen_radius.1);
            let rz = rng.gen_range(0.5..=1.0);
            let c0 = rng.gen_range(rad..=cols as f64 - 1.0 - rad);
            let z0 = rng.gen_range(0..slices) as f64;
            let ilm0 = ilm_rows[z0 as usize][c0.round() as usize] as f64;
            let lo = onl.0 as f64 + rad + 1.0;
            let r0 = ilm0 + rng.gen_range(lo..=(onl.1 as f64 - rad - 1.0).max(lo));
            let e = Ellipsoid {
                center: [r0, c0, z0],
                radii: [rad, rad, rz],
            };
            let vox = e.voxels(rows, cols, slices);
            let fits = vox.iter().all(|&(r, c, z)| {
                let d = r as i64 - ilm_rows[z][c] as i64;
                let clear = (r.saturating_sub(1)..=(r + 1).min(rows - 1))
                    .all(|rr| (c.saturating_sub(1)..=(c + 1).min(cols - 1)).all(|cc| !cyst_map[idx(rr, cc, z)]));
                d >= onl.0 as i64 && d < onl.1 as i64 && clear
            });
            fits.then_some((e, vox))
        });
        let (e, vox) = placed.ok_or(PhantomError::PlacementFailure { what: "drusen", index: i })?;
        for (r, c, z) in vox {
            drusen_map[idx(r, c, z)] = true;
        }
        drusen.push(e);
    }

    let mut speckle_rng = stream(p.seed, STREAM_SPECKLE);
    let mut images = Vec::with_capacity(slices);
    let mut masks = Vec::with_capacity(slices);
    for z in 0..slices {
        let bg = background(p, &ilm_rows[z]);
        let img = Image2D::from_fn(rows, cols, |r, c| {
            if cyst_map[idx(r, c, z)] {
                p.cyst_intensity
            } else if drusen_map[idx(r, c, z)] {
                p.drusen_intensity
            } else {
                bg.get(r, c)
            }
        });
        images.push(apply_speckle(&img, p.speckle, &mut speckle_rng));
        masks.push(Mask2D::from_fn(rows, cols, |r, c| cyst_map[idx(r, c, z)]));
    }
    Ok(Phantom {
        image: Volume::from_slices(&images, p.spacing).expect("consistent slices"),
        gt: Volume::from_masks(&masks, p.spacing).expect("consistent slices"),
        ilm,
        rpe,
        cysts,
        drusen,
    })
}

fn apply_speckle(img: &Image2D, strength: f64, rng: &mut ChaCha8Rng) -> Image2D {
    if strength == 0.0 {
        return img.clone();
    }
    let s2 = strength * strength;
    let g = Gamma::new(1.0 / s2, s2).expect("positive shape and scale");
    let data = img.data().iter().map(|&v| (v as f64 * g.sample(rng)) as f32).collect();
    Image2D::new(img.rows(), img.cols(), data).expect("finite speckle")
}

/// Multiplies every pixel by an independent Gamma(1/s^2, s^2) draw, which has
/// mean 1 and standard deviation `strength`.
pub fn speckle(img: &Image2D, strength: f64, seed: u64) -> Image2D {
    apply_speckle(img, strength, &mut stream(seed, STREAM_SPECKLE))
}

/// A single layered slice with one dark blob in the first bright layer and
/// one small bright blob in the last layer, plus the same slice without blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSlice {
    pub image: Image2D,
    pub background: Image2D,
    pub cyst: Mask2D,
    pub drusen: Mask2D,
}

pub const BLOB_CYST_RADIUS: usize = 8;
pub const BLOB_DRUSEN_RADIUS: usize = 2;

/// 128x128 noise-free demonstration slice.
pub fn blob_slice() -> BlobSlice {
    let n = 128;
    let band = |r: usize| match r {
        0..=29 => 0.2,
        30..=59 => 0.7,
        60..=84 => 0.45,
        85..=109 => 0.9,
        _ => 0.25,
    };
    let background = Image2D::from_fn(n, n, |r, _| band(r));
    let disk = |r: usize, c: usize, cr: usize, cc: usize, rad: usize| {
        let (dr, dc) = (r as i64 - cr as i64, c as i64 - cc as i64);
        dr * dr + dc * dc <= (rad * rad) as i64
    };
    let cyst = Mask2D::from_fn(n, n, |r, c| disk(r, c, 45, 40, BLOB_CYST_RADIUS));
    let drusen = Mask2D::from_fn(n, n, |r, c| disk(r, c, 97, 88, BLOB_DRUSEN_RADIUS));
    let image = Image2D::from_fn(n, n, |r, c| {
        if cyst.get(r, c) {
            0.0
        } else if drusen.get(r, c) {
            1.0
        } else {
            band(r)
        }
    });
    BlobSlice {
        image,
        background,
        cyst,
        drusen,
    }
}
