//! Validation metrics against ground truth: Dice overlap, exact
//! Hausdorff distance, and tolerance-based skeleton completeness and
//! correctness.

use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::grid::{distance_transform_sq, BinaryGrid};

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub dice: f64,
    pub hausdorff_mm: f64,
    pub completeness: Option<f64>,
    pub correctness: Option<f64>,
}

fn check_dims(a: &BinaryGrid, b: &BinaryGrid) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(PipelineError::DimensionMismatch {
            expected_w: a.width,
            expected_h: a.height,
            got_w: b.width,
            got_h: b.height,
        });
    }
    Ok(())
}

/// 2|A∩B| / (|A|+|B|); 1.0 when both sets are empty.
pub fn dice(pred: &BinaryGrid, truth: &BinaryGrid) -> Result<f64> {
    check_dims(pred, truth)?;
    let a = pred.count_on();
    let b = truth.count_on();
    if a + b == 0 {
        return Ok(1.0);
    }
    let inter = pred
        .on_pixels()
        .into_iter()
        .filter(|&(x, y)| truth.get(x, y))
        .count();
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

fn directed_max_dist_sq(from: &BinaryGrid, dt_to: &[f64]) -> f64 {
    from.on_pixels()
        .into_iter()
        .map(|(x, y)| dt_to[y * from.width + x])
        .fold(0.0, f64::max)
}

/// Exact symmetric Hausdorff distance in mm, via the exact Euclidean
/// distance transform of each set. Infinite when either set is empty.
pub fn hausdorff(pred: &BinaryGrid, truth: &BinaryGrid, mm_per_pixel: f64) -> Result<f64> {
    check_dims(pred, truth)?;
    if pred.count_on() == 0 || truth.count_on() == 0 {
        return Ok(f64::INFINITY);
    }
    let dt_truth = distance_transform_sq(truth);
    let dt_pred = distance_transform_sq(pred);
    let d_sq = directed_max_dist_sq(pred, &dt_truth).max(directed_max_dist_sq(truth, &dt_pred));
    Ok(d_sq.sqrt() * mm_per_pixel)
}

/// Completeness: fraction of truth pixels within tolerance of the
/// prediction (None when truth is empty). Correctness: fraction of
/// prediction pixels within tolerance of the truth (None when the
/// prediction is empty).
pub fn skeleton_completeness_correctness(
    pred: &BinaryGrid,
    truth: &BinaryGrid,
    tolerance_px: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    check_dims(pred, truth)?;
    let tol_sq = tolerance_px * tolerance_px;
    let covered = |subject: &BinaryGrid, reference: &BinaryGrid| -> Option<f64> {
        let total = subject.count_on();
        if total == 0 {
            return None;
        }
        if reference.count_on() == 0 {
            return Some(0.0);
        }
        let dt = distance_transform_sq(reference);
        let hit = subject
            .on_pixels()
            .into_iter()
            .filter(|&(x, y)| dt[y * subject.width + x] <= tol_sq + 1e-9)
            .count();
        Some(hit as f64 / total as f64)
    };
    Ok((covered(truth, pred), covered(pred, truth)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid_with(w: usize, h: usize, px: &[(usize, usize)]) -> BinaryGrid {
        let mut g = BinaryGrid::new(w, h);
        for &(x, y) in px {
            g.set(x, y, true);
        }
        g
    }

    fn hline(w: usize, h: usize, y: usize, x0: usize, x1: usize) -> BinaryGrid {
        grid_with(w, h, &(x0..=x1).map(|x| (x, y)).collect::<Vec<_>>())
    }

    #[test]
    fn dice_identical_disjoint_half() {
        let a = hline(40, 10, 5, 0, 19);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = hline(40, 10, 8, 0, 19);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = hline(40, 10, 5, 10, 29); // half overlap, equal size
        assert_relative_eq!(dice(&a, &c).unwrap(), 0.5);
        assert_eq!(
            dice(&BinaryGrid::new(5, 5), &BinaryGrid::new(5, 5)).unwrap(),
            1.0
        );
    }

    #[test]
    fn dice_symmetric_and_monotone_on_nested() {
        let truth = hline(60, 10, 5, 0, 39);
        let mut prev = 1.0;
        for cut in [0, 10, 20, 30] {
            let pred = hline(60, 10, 5, cut, 39);
            let d1 = dice(&pred, &truth).unwrap();
            let d2 = dice(&truth, &pred).unwrap();
            assert_eq!(d1, d2);
            assert!(d1 <= prev + 1e-12);
            prev = d1;
        }
    }

    #[test]
    fn hausdorff_point_pairs_and_subset() {
        let a = grid_with(30, 30, &[(5, 5)]);
        let b = grid_with(30, 30, &[(15, 5)]);
        assert_relative_eq!(hausdorff(&a, &b, 0.04).unwrap(), 0.4);
        assert_eq!(hausdorff(&a, &a, 0.04).unwrap(), 0.0);

        // A subset of B: only the B->A direction contributes
        let sub = hline(60, 10, 5, 10, 20);
        let sup = hline(60, 10, 5, 0, 40);
        let d = hausdorff(&sub, &sup, 1.0).unwrap();
        assert_relative_eq!(d, 20.0); // farthest B pixel (40,5) to (20,5)
        assert_relative_eq!(
            d,
            hausdorff(&sup, &sub, 1.0).unwrap() // symmetric
        );
    }

    #[test]
    fn hausdorff_empty_is_infinite() {
        let a = grid_with(10, 10, &[(1, 1)]);
        assert!(hausdorff(&a, &BinaryGrid::new(10, 10), 1.0)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn completeness_correctness_cases() {
        let truth = hline(60, 20, 10, 0, 39);
        let (c, r) = skeleton_completeness_correctness(&truth, &truth, 3.0).unwrap();
        assert_eq!((c, r), (Some(1.0), Some(1.0)));

        // prediction missing half the line
        let pred = hline(60, 20, 10, 0, 19);
        let (c, r) = skeleton_completeness_correctness(&pred, &truth, 0.5).unwrap();
        assert_relative_eq!(c.unwrap(), 0.5);
        assert_relative_eq!(r.unwrap(), 1.0);

        // spurious extra branch equal in length, far from truth
        let mut spurious = truth.clone();
        for x in 0..40 {
            spurious.set(x, 18, true);
        }
        let (c, r) = skeleton_completeness_correctness(&spurious, &truth, 3.0).unwrap();
        assert_relative_eq!(c.unwrap(), 1.0);
        assert_relative_eq!(r.unwrap(), 0.5);
    }

    #[test]
    fn duality_and_empty_truth() {
        let pred = hline(40, 10, 3, 0, 20);
        let truth = hline(40, 10, 6, 5, 30);
        let (c, _) = skeleton_completeness_correctness(&pred, &truth, 3.0).unwrap();
        let (_, r_swapped) = skeleton_completeness_correctness(&truth, &pred, 3.0).unwrap();
        assert_eq!(c, r_swapped);

        let (c, r) =
            skeleton_completeness_correctness(&pred, &BinaryGrid::new(40, 10), 3.0).unwrap();
        assert_eq!(c, None);
        assert_eq!(r, Some(0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = BinaryGrid::new(5, 5);
        let b = BinaryGrid::new(6, 5);
        assert!(dice(&a, &b).is_err());
        assert!(hausdorff(&a, &b, 1.0).is_err());
    }

    #[test]
    fn tolerance_boundary_inclusive() {
        let truth = grid_with(20, 20, &[(10, 10)]);
        let pred = grid_with(20, 20, &[(13, 10)]); // exactly 3 px away
        let (c, _) = skeleton_completeness_correctness(&pred, &truth, 3.0).unwrap();
        assert_eq!(c, Some(1.0));
        let (c, _) = skeleton_completeness_correctness(&pred, &truth, 2.9).unwrap();
        assert_eq!(c, Some(0.0));
    }
}
