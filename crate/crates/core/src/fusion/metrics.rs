//! Trajectory and object-map accuracy against ground truth.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_rigid, Pose3};

pub const DEFAULT_OBJECT_TOLERANCE: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub class: String,
    pub position: Vector3<f64>,
}

impl LabeledPoint {
    pub fn new(class: impl Into<String>, position: Vector3<f64>) -> Self {
        Self { class: class.into(), position }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionMetrics {
    pub ate_rmse: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    pub tolerance: f64,
    /// Align each robot's trajectory separately for ATE. Objects always use
    /// the joint alignment.
    pub per_robot_alignment: bool,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self { tolerance: DEFAULT_OBJECT_TOLERANCE, per_robot_alignment: false }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Rigid alignment of the stacked estimated positions onto ground truth.
/// Falls back to a translation when the trajectory is degenerate.
pub fn align_positions(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Pose3 {
    fit_rigid(est, gt).unwrap_or_else(|| {
        let n = est.len().max(1) as f64;
        let me: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / n;
        let mg: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / n;
        Pose3::from_translation(mg - me)
    })
}

/// One-to-one, same-class, nearest-first matching within `tol`.
/// Returns `(est index, gt index)` pairs.
pub fn match_objects(est: &[LabeledPoint], gt: &[LabeledPoint], tol: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, e) in est.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let d = (e.position - g.position).norm();
            if e.class == g.class && d <= tol {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_e[i] && !used_g[j] {
            used_e[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// ATE RMSE and object precision/recall/IoU. Trajectories are lists per
/// robot, matched by index.
pub fn metrics(
    est_trajectories: &[Vec<Pose3>],
    gt_trajectories: &[Vec<Pose3>],
    est_objects: &[LabeledPoint],
    gt_objects: &[LabeledPoint],
    params: &MetricsParams,
) -> Result<FusionMetrics> {
    if est_trajectories.len() != gt_trajectories.len() {
        return Err(Error::TrajectoryMismatch { estimated: est_trajectories.len(), truth: gt_trajectories.len() });
    }
    for (e, g) in est_trajectories.iter().zip(gt_trajectories) {
        if e.len() != g.len() {
            return Err(Error::TrajectoryMismatch { estimated: e.len(), truth: g.len() });
        }
    }
    let est: Vec<Vector3<f64>> = est_trajectories.iter().flatten().map(|p| *p.translation()).collect();
    let gt: Vec<Vector3<f64>> = gt_trajectories.iter().flatten().map(|p| *p.translation()).collect();
    if est.is_empty() {
        return Err(Error::EmptyTrajectories);
    }
    let joint = align_positions(&est, &gt);

    let mut sq = 0.0;
    if params.per_robot_alignment {
        for (e, g) in est_trajectories.iter().zip(gt_trajectories) {
            let e: Vec<_> = e.iter().map(|p| *p.translation()).collect();
            let g: Vec<_> = g.iter().map(|p| *p.translation()).collect();
            let t = align_positions(&e, &g);
            sq += e.iter().zip(&g).map(|(a, b)| (t.transform_point(a) - b).norm_squared()).sum::<f64>();
        }
    } else {
        sq = est.iter().zip(&gt).map(|(a, b)| (joint.transform_point(a) - b).norm_squared()).sum();
    }
    let ate_rmse = (sq / est.len() as f64).sqrt();

    let aligned: Vec<LabeledPoint> =
        est_objects.iter().map(|o| LabeledPoint::new(o.class.clone(), joint.transform_point(&o.position))).collect();
    let tp = match_objects(&aligned, gt_objects, params.tolerance).len();
    let fp = est_objects.len() - tp;
    let fn_ = gt_objects.len() - tp;
    Ok(FusionMetrics {
        ate_rmse,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        iou: ratio(tp, tp + fp + fn_),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> Vec<Pose3> {
        (0..n).map(|i| Pose3::from_yaw(0.1 * i as f64, Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0))).collect()
    }

    #[test]
    fn perfect_estimate() {
        let t = vec![line(10)];
        let o = vec![LabeledPoint::new("box", Vector3::new(1.0, 2.0, 0.0))];
        let m = metrics(&t, &t, &o, &o, &MetricsParams::default()).unwrap();
        assert!(m.ate_rmse < 1e-9);
        assert_eq!((m.precision, m.recall, m.iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_false_positive() {
        let t = vec![line(10)];
        let gt = vec![LabeledPoint::new("box", Vector3::new(1.0, 2.0, 0.0))];
        let est = vec![
            LabeledPoint::new("box", Vector3::new(1.5, 2.0, 0.0)),
            LabeledPoint::new("box", Vector3::new(30.0, 2.0, 0.0)),
        ];
        let m = metrics(&t, &t, &est, &gt, &MetricsParams::default()).unwrap();
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 1, 0));
        assert_eq!((m.precision, m.recall, m.iou), (0.5, 1.0, 0.5));
    }

    #[test]
    fn rigidly_moved_estimate_aligns_to_zero() {
        let gt = vec![line(12), line(5)];
        let shift = Pose3::from_yaw(1.0, Vector3::new(4.0, -2.0, 1.0));
        let est: Vec<Vec<Pose3>> = gt.iter().map(|t| t.iter().map(|p| shift.compose(p)).collect()).collect();
        let m = metrics(&est, &gt, &[], &[], &MetricsParams::default()).unwrap();
        assert!(m.ate_rmse < 1e-9);
    }

    #[test]
    fn known_offset_rmse() {
        // Alternating ±0.5 m lateral error around a straight line aligns to
        // itself (mean zero), so RMSE is exactly 0.5.
        let gt: Vec<Pose3> = (0..10).map(|i| Pose3::from_translation(Vector3::new(i as f64, 0.0, 0.0))).collect();
        let est: Vec<Pose3> = (0..10)
            .map(|i| Pose3::from_translation(Vector3::new(i as f64, if i % 2 == 0 { 0.5 } else { -0.5 }, 0.0)))
            .collect();
        let m = metrics(&[est], &[gt], &[], &[], &MetricsParams::default()).unwrap();
        assert!((m.ate_rmse - 0.5).abs() < 0.02, "{}", m.ate_rmse);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(metrics(&[], &[], &[], &[], &MetricsParams::default()), Err(Error::EmptyTrajectories)));
        assert!(metrics(&[line(3)], &[line(4)], &[], &[], &MetricsParams::default()).is_err());
    }

    #[test]
    fn class_must_match() {
        let est = vec![LabeledPoint::new("box", Vector3::zeros())];
        let gt = vec![LabeledPoint::new("sign", Vector3::zeros())];
        assert!(match_objects(&est, &gt, 5.0).is_empty());
    }

    proptest! {
        #[test]
        fn ratios_are_bounded(
            est in proptest::collection::vec((0.0f64..30.0, 0.0f64..30.0, 0usize..3), 0..15),
            gt in proptest::collection::vec((0.0f64..30.0, 0.0f64..30.0, 0usize..3), 0..15),
        ) {
            let classes = ["a", "b", "c"];
            let lp = |v: &Vec<(f64, f64, usize)>| v.iter().map(|(x, y, c)| LabeledPoint::new(classes[*c], Vector3::new(*x, *y, 0.0))).collect::<Vec<_>>();
            let t = vec![line(4)];
            let m = metrics(&t, &t, &lp(&est), &lp(&gt), &MetricsParams::default()).unwrap();
            for v in [m.precision, m.recall, m.iou] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.iou <= m.precision.min(m.recall) + 1e-12);
        }
    }
}
