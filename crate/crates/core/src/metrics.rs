//! Overlap metrics and the per-volume evaluation protocol.
//!
//! Every ratio whose denominator is empty is defined as 1: two empty masks
//! agree perfectly.

use crate::volume_io::Mask2D;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("mask is {got:?}, expected {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("no annotated slices")]
    NoAnnotatedSlices,
    #[error("annotated slice {z} out of range for {slices} slices")]
    SliceOutOfRange { z: usize, slices: usize },
    #[error("spacing must be positive, got {0:?}")]
    NonPositiveSpacing([f32; 3]),
    #[error("{pred} predicted slices, {gt} ground-truth slices")]
    SliceCountMismatch { pred: usize, gt: usize },
}

fn same_dims(a: &Mask2D, b: &Mask2D) -> Result<(), MetricError> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(MetricError::DimMismatch {
            expected: (a.rows(), a.cols()),
            got: (b.rows(), b.cols()),
        });
    }
    Ok(())
}

/// Pixel counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Tally {
    /// Counts over pixels not set in `exclude`.
    pub fn count(pred: &Mask2D, gt: &Mask2D, exclude: Option<&Mask2D>) -> Result<Self, MetricError> {
        same_dims(pred, gt)?;
        if let Some(e) = exclude {
            same_dims(pred, e)?;
        }
        let mut t = Tally::default();
        for i in 0..pred.data().len() {
            if exclude.is_some_and(|e| e.data()[i] != 0) {
                continue;
            }
            match (pred.data()[i] != 0, gt.data()[i] != 0) {
                (true, true) => t.tp += 1,
                (true, false) => t.fp += 1,
                (false, true) => t.fn_ += 1,
                _ => {}
            }
        }
        Ok(t)
    }

    pub fn add(self, o: Tally) -> Tally {
        Tally {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }

    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn jaccard(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn ppv(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

/// `2|a n b| / (|a| + |b|)`
pub fn dice(a: &Mask2D, b: &Mask2D) -> Result<f64, MetricError> {
    Ok(Tally::count(a, b, None)?.dice())
}

/// `|a n b| / |a u b|`
pub fn jaccard(a: &Mask2D, b: &Mask2D) -> Result<f64, MetricError> {
    Ok(Tally::count(a, b, None)?.jaccard())
}

pub fn ppv_sensitivity(pred: &Mask2D, gt: &Mask2D) -> Result<(f64, f64), MetricError> {
    let t = Tally::count(pred, gt, None)?;
    Ok((t.ppv(), t.sensitivity()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    Grader1,
    Grader2,
    Intersection,
    Union,
}

impl Combiner {
    pub fn name(self) -> &'static str {
        match self {
            Combiner::Grader1 => "grader1",
            Combiner::Grader2 => "grader2",
            Combiner::Intersection => "intersection",
            Combiner::Union => "union",
        }
    }
}

impl std::str::FromStr for Combiner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grader1" | "g1" => Ok(Combiner::Grader1),
            "grader2" | "g2" => Ok(Combiner::Grader2),
            "intersection" | "and" => Ok(Combiner::Intersection),
            "union" | "or" => Ok(Combiner::Union),
            other => Err(format!("unknown grader combiner {other:?}")),
        }
    }
}

pub fn combine_graders(g1: &Mask2D, g2: &Mask2D, mode: Combiner) -> Result<Mask2D, MetricError> {
    same_dims(g1, g2)?;
    Ok(match mode {
        Combiner::Grader1 => g1.clone(),
        Combiner::Grader2 => g2.clone(),
        Combiner::Intersection => Mask2D::from_fn(g1.rows(), g1.cols(), |r, c| g1.get(r, c) && g2.get(r, c)),
        Combiner::Union => Mask2D::from_fn(g1.rows(), g1.cols(), |r, c| g1.get(r, c) || g2.get(r, c)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Unmasked,
    /// The central disk of this radius (mm) is excluded from the tallies.
    Masked { radius_mm: f64 },
}

impl EvalMode {
    pub const MASKED_3MM: EvalMode = EvalMode::Masked { radius_mm: 3.0 };

    pub fn name(&self) -> String {
        match self {
            EvalMode::Unmasked => "unmasked".into(),
            EvalMode::Masked { radius_mm } => format!("masked-{radius_mm}mm"),
        }
    }
}

/// Per-slice exclusion masks of an en-face disk centred on the volume's
/// (column, slice) midpoint. A column of slice `z` is excluded, over all rows,
/// when `((c - cc) * sy)^2 + ((z - cz) * sz)^2 <= radius^2`.
pub fn central_mask(
    rows: usize,
    cols: usize,
    slices: usize,
    spacing: [f32; 3],
    radius_mm: f64,
) -> Result<Vec<Mask2D>, MetricError> {
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(MetricError::NonPositiveSpacing(spacing));
    }
    let (sy, sz) = (spacing[1] as f64, spacing[2] as f64);
    let cc = (cols as f64 - 1.0) / 2.0;
    let cz = (slices as f64 - 1.0) / 2.0;
    Ok((0..slices)
        .map(|z| {
            let dz = (z as f64 - cz) * sz;
            Mask2D::from_fn(rows, cols, |_, c| {
                let dc = (c as f64 - cc) * sy;
                radius_mm > 0.0 && dc * dc + dz * dz <= radius_mm * radius_mm
            })
        })
        .collect())
}

/// Scores of one volume, pooled over its annotated slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeScores {
    pub tally: Tally,
    pub dice: f64,
    pub jaccard: f64,
    pub ppv: f64,
    pub sensitivity: f64,
}

impl From<Tally> for VolumeScores {
    fn from(t: Tally) -> Self {
        Self {
            tally: t,
            dice: t.dice(),
            jaccard: t.jaccard(),
            ppv: t.ppv(),
            sensitivity: t.sensitivity(),
        }
    }
}

/// Sums TP/FP/FN over `annotated` slices, then computes each metric once.
pub fn evaluate_volume(
    pred: &[Mask2D],
    gt: &[Mask2D],
    annotated: &[usize],
    exclude: Option<&[Mask2D]>,
) -> Result<VolumeScores, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::SliceCountMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if annotated.is_empty() {
        return Err(MetricError::NoAnnotatedSlices);
    }
    let mut total = Tally::default();
    for &z in annotated {
        if z >= gt.len() {
            return Err(MetricError::SliceOutOfRange { z, slices: gt.len() });
        }
        let ex = exclude.and_then(|e| e.get(z));
        total = total.add(Tally::count(&pred[z], &gt[z], ex)?);
    }
    Ok(total.into())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-volume rows plus the summary across volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub combiner: Combiner,
    pub rows: Vec<(String, VolumeScores)>,
}

impl EvalReport {
    pub fn new(mode: EvalMode, combiner: Combiner) -> Self {
        Self {
            mode,
            combiner,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, s: VolumeScores) {
        self.rows.push((id.into(), s));
    }

    fn column(&self, f: impl Fn(&VolumeScores) -> f64) -> Vec<f64> {
        self.rows.iter().map(|(_, s)| f(s)).collect()
    }

    /// `(mean, std)` of DC, JI, PPV and sensitivity.
    pub fn summary(&self) -> [(f64, f64); 4] {
        [
            mean_std(&self.column(|s| s.dice)),
            mean_std(&self.column(|s| s.jaccard)),
            mean_std(&self.column(|s| s.ppv)),
            mean_std(&self.column(|s| s.sensitivity)),
        ]
    }

    /// Tab-separated table with a header, one row per volume and a
    /// `mean/std` row.
    pub fn render(&self) -> String {
        let mode = self.mode.name();
        let comb = self.combiner.name();
        let mut out = String::from("volume\tDC\tJI\tPPV\tSens\tmode\tcombiner\n");
        for (id, s) in &self.rows {
            let _ = writeln!(
                out,
                "{id}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{mode}\t{comb}",
                s.dice, s.jaccard, s.ppv, s.sensitivity
            );
        }
        let [d, j, p, se] = self.summary();
        let _ = writeln!(
            out,
            "mean/std\t{:.4}/{:.4}\t{:.4}/{:.4}\t{:.4}/{:.4}\t{:.4}/{:.4}\t{mode}\t{comb}",
            d.0, d.1, j.0, j.1, p.0, p.1, se.0, se.1
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(rows: usize, cols: usize, bits: &[(usize, usize)]) -> Mask2D {
        Mask2D::from_fn(rows, cols, |r, c| bits.contains(&(r, c)))
    }

    #[test]
    fn hand_cases() {
        let a = mask(3, 3, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let b = mask(3, 3, &[(0, 0), (0, 1), (2, 2), (2, 1)]);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(jaccard(&a, &b).unwrap(), 2.0 / 6.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let far = mask(3, 3, &[(2, 2)]);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &far).unwrap(), 0.0);
        let empty = Mask2D::zeros(3, 3);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
        assert_eq!(ppv_sensitivity(&a, &a).unwrap(), (1.0, 1.0));
        let sup = mask(3, 3, &[(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)]);
        let (p, s) = ppv_sensitivity(&sup, &a).unwrap();
        assert!(p < 1.0 && s == 1.0);
        assert_eq!(ppv_sensitivity(&empty, &a).unwrap(), (1.0, 0.0));
        assert!(dice(&a, &Mask2D::zeros(2, 3)).is_err());
    }

    #[test]
    fn symmetry_and_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = rng.gen_range(0.0..1.0);
            let a = Mask2D::from_fn(9, 7, |_, _| rng.gen_bool(p));
            let b = Mask2D::from_fn(9, 7, |_, _| rng.gen_bool(p));
            let d = dice(&a, &b).unwrap();
            let j = jaccard(&a, &b).unwrap();
            assert_eq!(d, dice(&b, &a).unwrap());
            assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
            assert!((j - d / (2.0 - d)).abs() <= 1e-12);
            let (ppv_ab, _) = ppv_sensitivity(&a, &b).unwrap();
            let (_, sens_ba) = ppv_sensitivity(&b, &a).unwrap();
            assert_eq!(ppv_ab, sens_ba);
        }
    }

    #[test]
    fn grader_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g1 = Mask2D::from_fn(6, 6, |_, _| rng.gen_bool(0.5));
        let g2 = Mask2D::from_fn(6, 6, |_, _| rng.gen_bool(0.5));
        let and = combine_graders(&g1, &g2, Combiner::Intersection).unwrap();
        let or = combine_graders(&g1, &g2, Combiner::Union).unwrap();
        for i in 0..36 {
            assert!(and.data()[i] <= g1.data()[i] && and.data()[i] <= g2.data()[i]);
            assert!(or.data()[i] >= g1.data()[i] && or.data()[i] >= g2.data()[i]);
        }
        for mode in [Combiner::Grader1, Combiner::Grader2, Combiner::Intersection, Combiner::Union] {
            assert_eq!(combine_graders(&g1, &g1, mode).unwrap(), g1);
            assert_eq!(mode.name().parse::<Combiner>().unwrap(), mode);
        }
    }

    #[test]
    fn central_disk_area_and_limits() {
        let spacing = [0.004, 0.012, 0.05];
        let masks = central_mask(4, 800, 200, spacing, 3.0).unwrap();
        // Count en-face disk cells using row 0 of each slice.
        let cells: usize = masks.iter().map(|m| (0..800).filter(|&c| m.get(0, c)).count()).sum();
        let expect = std::f64::consts::PI * 9.0 / (0.012 * 0.05);
        assert!((cells as f64 - expect).abs() / expect < 0.05, "{cells} vs {expect}");
        assert!(central_mask(4, 10, 3, spacing, 0.0).unwrap().iter().all(Mask2D::is_empty));
        assert!(central_mask(4, 10, 3, spacing, 100.0)
            .unwrap()
            .iter()
            .all(|m| m.count() == 40));
        assert!(central_mask(4, 10, 3, [0.0, 1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn pooled_volume_scores() {
        let gt = vec![mask(2, 2, &[(0, 0)]), mask(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)])];
        let pred = vec![Mask2D::zeros(2, 2), gt[1].clone()];
        let pooled = evaluate_volume(&pred, &gt, &[0, 1], None).unwrap();
        // Pooled: 2*4 / (4 + 5) = 0.888..; averaging per-slice dice gives 0.5.
        assert!((pooled.dice - 8.0 / 9.0).abs() < 1e-12);
        let per_slice = (dice(&pred[0], &gt[0]).unwrap() + dice(&pred[1], &gt[1]).unwrap()) / 2.0;
        assert_eq!(per_slice, 0.5);
        assert_eq!(evaluate_volume(&pred, &gt, &[1], None).unwrap().dice, 1.0);
        assert_eq!(evaluate_volume(&pred, &gt, &[], None).err(), Some(MetricError::NoAnnotatedSlices));
        let everything = vec![Mask2D::from_fn(2, 2, |_, _| true); 2];
        let masked = evaluate_volume(&pred, &gt, &[0, 1], Some(&everything)).unwrap();
        assert_eq!(masked.tally, Tally::default());
        assert_eq!(masked.dice, 1.0);
    }

    #[test]
    fn report_table() {
        let mut rep = EvalReport::new(EvalMode::Unmasked, Combiner::Intersection);
        rep.push("a", Tally { tp: 1, fp: 1, fn_: 0 }.into());
        rep.push("b", Tally { tp: 1, fp: 0, fn_: 0 }.into());
        let [d, ..] = rep.summary();
        let d_a = 2.0 / 3.0;
        assert!((d.0 - (d_a + 1.0) / 2.0).abs() < 1e-12);
        assert!((d.1 - (1.0 - d_a) / 2.0).abs() < 1e-12);
        let text = rep.render();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("volume\tDC\tJI\tPPV\tSens\tmode\tcombiner\n"));
        assert!(text.contains("\tunmasked\tintersection"));
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
    }
}
