//! Registration quality metrics.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_angle_between, RigidTransform};
use crate::matcher::{CorrespondenceSet, NodeMatch};
use crate::scalar::Real;
use crate::scene_graph::GroundTruth;
use crate::Transform;

/// Correspondence inlier distance (meters).
pub const INLIER_DISTANCE: f64 = 0.1;
/// Registration recall threshold on aligned-correspondence RMSE (meters).
pub const RMSE_THRESHOLD: f64 = 0.2;
/// Frame success thresholds.
pub const RTE_THRESHOLD: f64 = 0.2;
pub const RRE_THRESHOLD_DEG: f64 = 5.0;

/// Node recall and precision against the true node pairs. An empty
/// prediction has precision 1 only if the truth is empty too.
pub fn node_recall_precision<T: Real>(matches: &[NodeMatch<T>], gt: &GroundTruth) -> (f64, f64) {
    let tp = matches.iter().filter(|m| gt.is_match(m.i, m.j)).count() as f64;
    let nr = if gt.node_matches.is_empty() {
        1.0
    } else {
        tp / gt.node_matches.len() as f64
    };
    let np = if matches.is_empty() {
        if gt.node_matches.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        tp / matches.len() as f64
    };
    (nr, np)
}

fn is_inlier<T: Real>(c: &crate::matcher::Correspondence<T>, truth: &Transform, thr: f64) -> bool {
    let c = c.cast::<f64>();
    (truth.apply(&c.p) - c.q).norm() < thr
}

/// Fraction of correspondences within `thr` of the true alignment.
pub fn inlier_ratio<T: Real>(c: &CorrespondenceSet<T>, truth: &Transform, thr: f64) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    c.pairs.iter().filter(|p| is_inlier(p, truth, thr)).count() as f64 / c.len() as f64
}

/// Inlier ratio among the correspondences kept by outlier pruning
/// (`kept` indexes into `c`).
pub fn pseudo_inlier_ratio<T: Real>(c: &CorrespondenceSet<T>, kept: &[usize], truth: &Transform, thr: f64) -> f64 {
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().filter(|&&k| is_inlier(&c.pairs[k], truth, thr)).count() as f64 / kept.len() as f64
}

/// RMSE between `points` mapped by the estimate and by the truth.
pub fn alignment_rmse(estimate: &Transform, truth: &Transform, points: &[Point3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let s: f64 = points
        .iter()
        .map(|p| (estimate.apply(p) - truth.apply(p)).norm_squared())
        .sum();
    (s / points.len() as f64).sqrt()
}

/// Source points of the ground-truth point pairs, the cloud on which RMSE
/// is measured. `points_of` resolves a node id of graph A to its points.
pub fn gt_corresponded_points<'a>(
    gt: &GroundTruth,
    points_of: impl Fn(u32) -> Option<&'a [Point3<f64>]>,
) -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    for (&(i, _), pairs) in &gt.point_matches {
        if let Some(pts) = points_of(i) {
            out.extend(pairs.iter().map(|&(u, _)| pts[u]));
        }
    }
    out
}

/// `(estimate, truth, gt-corresponded source points)`.
pub type RecallItem = (Option<Transform>, Transform, Vec<Point3<f64>>);

/// Fraction of pairs whose aligned-correspondence RMSE is below `thr`;
/// a missing estimate counts as a failure.
pub fn registration_recall(items: &[RecallItem], thr: f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let ok = items
        .iter()
        .filter(|(est, truth, pts)| est.as_ref().is_some_and(|e| alignment_rmse(e, truth, pts) < thr))
        .count();
    ok as f64 / items.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub rte: f64,
    pub rre: f64,
    pub success: bool,
}

/// RTE (meters) and RRE (degrees) of `estimate` against `truth`; success
/// iff RTE < 0.2 m and RRE < 5 degrees.
pub fn evaluate_frame<T: Real>(estimate: &RigidTransform<T>, truth: &RigidTransform<T>) -> FrameEval {
    let (e, t) = (estimate.cast::<f64>(), truth.cast::<f64>());
    let rte = (e.translation - t.translation).norm();
    let rre = rotation_angle_between(&e.rotation, &t.rotation).to_degrees();
    FrameEval {
        rte,
        rre,
        success: rte < RTE_THRESHOLD && rre < RRE_THRESHOLD_DEG,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::Correspondence;
    use nalgebra::Vector3;
    use std::collections::{BTreeMap, BTreeSet};

    fn gt(pairs: &[(u32, u32)]) -> GroundTruth {
        GroundTruth {
            node_matches: pairs.iter().copied().collect::<BTreeSet<_>>(),
            negatives_a: BTreeMap::new(),
            negatives_b: BTreeMap::new(),
            point_matches: BTreeMap::new(),
            true_transform: Transform::identity(),
            iou: BTreeMap::new(),
        }
    }

    fn nm(i: u32, j: u32) -> NodeMatch<f64> {
        NodeMatch { i, j, score: 1.0 }
    }

    #[test]
    fn node_metrics_count() {
        let g = gt(&[(0, 0), (1, 1), (2, 2), (3, 3)]);
        let (nr, np) = node_recall_precision(&[nm(0, 0), nm(1, 1), nm(2, 3)], &g);
        assert_eq!((nr, np), (0.5, 2.0 / 3.0));
        assert_eq!(node_recall_precision::<f64>(&[], &gt(&[])), (1.0, 1.0));
    }

    #[test]
    fn frame_evaluation() {
        let t = RigidTransform::from_yaw(0.3, Vector3::new(1.0, 2.0, 0.0));
        let e = evaluate_frame(&t, &t);
        assert!(e.rte == 0.0 && e.rre < 1e-6 && e.success);
        let yawed = RigidTransform::from_yaw(0.3 + 10f64.to_radians(), t.translation);
        let e = evaluate_frame(&yawed, &t);
        assert!((e.rre - 10.0).abs() < 1e-9 && !e.success);
    }

    #[test]
    fn recall_tally() {
        let truth = RigidTransform::from_yaw(0.0, Vector3::new(5.0, 0.0, 0.0));
        let pts = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        let off = RigidTransform::from_yaw(0.0, Vector3::new(5.1, 0.0, 0.0));
        let items = vec![
            (Some(truth), truth, pts.clone()),
            (Some(Transform::identity()), truth, pts.clone()),
            (Some(off), truth, pts.clone()),
            (None, truth, pts),
        ];
        assert_eq!(registration_recall(&items, RMSE_THRESHOLD), 0.5);
    }

    #[test]
    fn pruning_raises_pir() {
        let truth = Transform::identity();
        let o = Point3::origin();
        let far = Point3::new(1.0, 0.0, 0.0);
        let c = CorrespondenceSet::new(vec![
            Correspondence::new(o, o, 1.0),
            Correspondence::new(far, far, 1.0),
            Correspondence::new(o, far, 1.0),
            Correspondence::new(far, o, 1.0),
        ]);
        let ir = inlier_ratio(&c, &truth, INLIER_DISTANCE);
        let pir = pseudo_inlier_ratio(&c, &[0, 1, 3], &truth, INLIER_DISTANCE);
        assert_eq!(ir, 0.5);
        assert!(pir > ir);
    }
}
