//! Robust pose estimation: NMS, GNC-TLS, pyramid maximum cliques and
//! verification-based candidate selection.

mod clique;
mod solver;
mod verify;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Point3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::matcher::CorrespondenceSet;
use crate::scalar::Real;
use crate::spatial::{voxel_key, VoxelKey};

pub use clique::{build_pyramid, compatibility, max_clique, BitSet, CliqueResult, CompatibilityGraph};
pub use solver::{gnc_tls, mahalanobis_align, svd_align, tls_weight, GncOutcome, GncSchedule};
pub use verify::{verify, verify_with_map, VoxelMap, EMPTY_VOXEL_PENALTY, MIN_PLANE_POINTS, PLANARITY_RATIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "T: Serialize + DeserializeOwned")]
pub struct EstimatorConfig<T: Real> {
    /// Compatibility thresholds of the pyramid levels (meters, increasing).
    pub deltas: Vec<T>,
    /// TLS inlier threshold c̄ (meters).
    pub inlier_threshold: T,
    /// Growth factor of the GNC surrogate parameter.
    pub gnc_factor: T,
    pub gnc_max_iters: usize,
    /// GNC inlier ratio at or above which the clique search is skipped.
    pub mac_trigger: T,
    pub nms_radius: T,
    pub verify_voxel: f64,
    pub verify_samples: usize,
    /// Wall-clock budget per clique search, milliseconds.
    pub clique_budget_ms: u64,
    /// Mahalanobis threshold used when covariances are supplied.
    pub mahalanobis_threshold: T,
}

impl<T: Real> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            deltas: vec![T::lit(0.1), T::lit(0.2), T::lit(0.3)],
            inlier_threshold: T::lit(0.1),
            gnc_factor: T::lit(1.4),
            gnc_max_iters: 64,
            mac_trigger: T::lit(0.3),
            nms_radius: T::lit(0.05),
            verify_voxel: 0.2,
            verify_samples: 4000,
            clique_budget_ms: 2000,
            mahalanobis_threshold: T::lit(1.0),
        }
    }
}

impl<T: Real> EstimatorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero();
        if self.deltas.is_empty() || !self.deltas.iter().all(|d| pos(*d)) {
            return Err(Error::Config("delta levels must be positive and non-empty".into()));
        }
        if self.deltas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("delta levels must be strictly increasing".into()));
        }
        if !pos(self.inlier_threshold) || !pos(self.nms_radius) || !pos(self.mahalanobis_threshold) {
            return Err(Error::Config("thresholds and radii must be positive".into()));
        }
        if self.gnc_factor <= T::one() || self.gnc_max_iters == 0 {
            return Err(Error::Config(
                "GNC factor must exceed 1 and max iterations be positive".into(),
            ));
        }
        if self.verify_voxel <= 0.0 || self.verify_samples == 0 {
            return Err(Error::Config(
                "verification voxel and sample count must be positive".into(),
            ));
        }
        if !(self.mac_trigger > T::zero() && self.mac_trigger <= T::one()) {
            return Err(Error::Config("MAC trigger must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> GncSchedule<T> {
        GncSchedule {
            factor: self.gnc_factor,
            max_iters: self.gnc_max_iters,
            ..GncSchedule::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    GncOnly,
    MacGnc,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::GncOnly => "gnc",
            Strategy::MacGnc => "mac+gnc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T: Real> {
    pub transform: RigidTransform<T>,
    /// Pyramid level, `None` for the all-correspondence GNC candidate.
    pub level: Option<usize>,
    pub clique_size: usize,
    pub inlier_count: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult<T: Real> {
    pub transform: RigidTransform<T>,
    /// Indices into the input correspondence set.
    pub inliers: Vec<usize>,
    /// `|inliers| / |input correspondences|`.
    pub inlier_ratio: f64,
    /// Inlier ratio measured by GNC on the NMS survivors.
    pub gnc_inlier_ratio: f64,
    /// Indices surviving NMS.
    pub kept: Vec<usize>,
    /// Survivors of the chosen outlier-pruning step (GNC inliers or clique).
    pub pruned: Vec<usize>,
    pub candidates: Vec<Candidate<T>>,
    pub chosen: usize,
    pub strategy: Strategy,
    pub clique_invoked: bool,
    pub clique_exact: bool,
    pub graph_time: Duration,
    pub clique_time: Duration,
}

impl<T: Real> EstimateResult<T> {
    pub fn score(&self) -> f64 {
        self.candidates[self.chosen].score
    }

    /// Line-oriented diagnostic report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "strategy {}", self.strategy.tag());
        let _ = writeln!(s, "gnc_inlier_ratio {:.6}", self.gnc_inlier_ratio);
        let _ = writeln!(s, "chosen {}", self.chosen);
        for (k, c) in self.candidates.iter().enumerate() {
            let m = c.transform.cast::<f64>().to_matrix4();
            let vals: Vec<String> = (0..4)
                .flat_map(|r| (0..4).map(move |col| (r, col)))
                .map(|(r, col)| format!("{:.9}", m[(r, col)]))
                .collect();
            let level = c.level.map_or("all".to_string(), |l| l.to_string());
            let _ = writeln!(
                s,
                "candidate {k} level {level} clique {} inliers {} score {:.6} matrix {}",
                c.clique_size,
                c.inlier_count,
                c.score,
                vals.join(" ")
            );
        }
        s
    }
}

/// Greedy NMS on source points: visit by descending score (ties by index)
/// and keep a correspondence unless a kept one has its source within
/// `radius`. Returns kept indices in ascending order.
pub fn nms_indices<T: Real>(c: &CorrespondenceSet<T>, radius: T) -> Vec<usize> {
    let r = radius.to_f64_lossy();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| {
        c.pairs[b]
            .score
            .partial_cmp(&c.pairs[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let pt = |k: usize| {
        let p = c.pairs[k].p;
        Point3::new(p.x.to_f64_lossy(), p.y.to_f64_lossy(), p.z.to_f64_lossy())
    };
    let mut grid: HashMap<VoxelKey, Vec<Point3<f64>>> = HashMap::new();
    let mut kept = Vec::new();
    for k in order {
        let p = pt(k);
        let (x, y, z) = voxel_key(&p, r);
        let mut blocked = false;
        'outer: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = grid.get(&(x + dx, y + dy, z + dz)) {
                        if v.iter().any(|q| (q - p).norm() < r) {
                            blocked = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
        if !blocked {
            grid.entry((x, y, z)).or_default().push(p);
            kept.push(k);
        }
    }
    kept.sort_unstable();
    kept
}

pub fn nms_correspondences<T: Real>(c: &CorrespondenceSet<T>, radius: T) -> CorrespondenceSet<T> {
    CorrespondenceSet::new(nms_indices(c, radius).into_iter().map(|k| c.pairs[k]).collect())
}

/// Per-correspondence covariances for the Mahalanobis residual.
pub type Covariances<T> = Vec<Matrix3<T>>;

/// Hybrid estimator: NMS, GNC on everything, and when the GNC inlier ratio
/// falls below the trigger, one maximum clique per pyramid level with a
/// GNC fit each; candidates are ranked by verification against the clouds.
/// Empty clouds fall back to the correspondence endpoints.
pub fn estimate<T: Real>(
    c: &CorrespondenceSet<T>,
    x_cloud: &[Point3<f64>],
    y_cloud: &[Point3<f64>],
    cfg: &EstimatorConfig<T>,
) -> Result<EstimateResult<T>> {
    estimate_with_covariances(c, None, x_cloud, y_cloud, cfg)
}

pub fn estimate_with_covariances<T: Real>(
    c: &CorrespondenceSet<T>,
    covariances: Option<&[Matrix3<T>]>,
    x_cloud: &[Point3<f64>],
    y_cloud: &[Point3<f64>],
    cfg: &EstimatorConfig<T>,
) -> Result<EstimateResult<T>> {
    cfg.validate()?;
    let kept = nms_indices(c, cfg.nms_radius);
    if kept.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: kept.len(),
        });
    }
    let src: Vec<Point3<T>> = kept.iter().map(|&k| c.pairs[k].p).collect();
    let dst: Vec<Point3<T>> = kept.iter().map(|&k| c.pairs[k].q).collect();
    let cov: Option<Vec<Matrix3<T>>> = covariances.map(|cv| kept.iter().map(|&k| cv[k]).collect());
    let threshold = if cov.is_some() {
        cfg.mahalanobis_threshold
    } else {
        cfg.inlier_threshold
    };
    let schedule = cfg.schedule();
    let gnc = gnc_tls(&src, &dst, threshold, &schedule, cov.as_deref()).ok();
    let gnc_ratio = gnc
        .as_ref()
        .map_or(0.0, |g| g.inlier_count() as f64 / kept.len() as f64);

    let to_f64 = |p: &Point3<T>| Point3::new(p.x.to_f64_lossy(), p.y.to_f64_lossy(), p.z.to_f64_lossy());
    let xs: Vec<Point3<f64>> = if x_cloud.is_empty() {
        src.iter().map(to_f64).collect()
    } else {
        x_cloud.to_vec()
    };
    let ys: Vec<Point3<f64>> = if y_cloud.is_empty() {
        dst.iter().map(to_f64).collect()
    } else {
        y_cloud.to_vec()
    };
    let map = VoxelMap::new(&ys, cfg.verify_voxel);
    let score = |t: &RigidTransform<T>| verify_with_map(t, &xs, &map, cfg.verify_samples);

    let mut candidates = Vec::new();
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    let mut strategy = Strategy::GncOnly;
    let mut clique_invoked = false;
    let mut clique_exact = true;
    let mut graph_time = Duration::ZERO;
    let mut clique_time = Duration::ZERO;

    let gnc_candidate = gnc.as_ref().map(|g| Candidate {
        transform: g.transform,
        level: None,
        clique_size: 0,
        inlier_count: g.inlier_count(),
        score: score(&g.transform),
    });
    let gnc_inliers: Vec<usize> = gnc
        .as_ref()
        .map_or(Vec::new(), |g| (0..kept.len()).filter(|&k| g.inliers[k]).collect());

    if gnc.is_some() && gnc_ratio >= cfg.mac_trigger.to_f64_lossy() {
        candidates.push(gnc_candidate.unwrap());
        subsets.push(gnc_inliers);
    } else {
        strategy = Strategy::MacGnc;
        clique_invoked = true;
        let t0 = Instant::now();
        let pyramid = build_pyramid(&src, &dst, &cfg.deltas);
        graph_time = t0.elapsed();
        let budget = Duration::from_millis(cfg.clique_budget_ms);
        for g in &pyramid {
            let t1 = Instant::now();
            let cl = max_clique(g, Some(budget));
            clique_time += t1.elapsed();
            clique_exact &= cl.exact;
            if cl.vertices.len() < 3 {
                continue;
            }
            let cs: Vec<Point3<T>> = cl.vertices.iter().map(|&v| src[v]).collect();
            let cd: Vec<Point3<T>> = cl.vertices.iter().map(|&v| dst[v]).collect();
            let ccov: Option<Vec<Matrix3<T>>> = cov.as_ref().map(|cv| cl.vertices.iter().map(|&v| cv[v]).collect());
            let Ok(fit) = gnc_tls(&cs, &cd, threshold, &schedule, ccov.as_deref()) else {
                continue;
            };
            candidates.push(Candidate {
                score: score(&fit.transform),
                transform: fit.transform,
                level: Some(g.level),
                clique_size: cl.vertices.len(),
                inlier_count: fit.inliers.iter().filter(|b| **b).count(),
            });
            subsets.push(cl.vertices.clone());
        }
        if candidates.is_empty() {
            if let Some(g) = gnc_candidate {
                candidates.push(g);
                subsets.push(gnc_inliers);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Degenerate("no candidate transform could be fitted".into()));
    }
    let chosen = (0..candidates.len())
        .min_by(|&a, &b| {
            candidates[a]
                .score
                .partial_cmp(&candidates[b].score)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap();
    let transform = candidates[chosen].transform;
    let thr = threshold.to_f64_lossy();
    let info: Option<Vec<Matrix3<T>>> = covariances.map(|cv| {
        cv.iter()
            .map(|m| m.try_inverse().unwrap_or_else(Matrix3::identity))
            .collect()
    });
    let inliers: Vec<usize> = (0..c.len())
        .filter(|&k| {
            let e = c.pairs[k].q - transform.apply(&c.pairs[k].p);
            let r = match &info {
                Some(o) => (e.transpose() * o[k] * e)[(0, 0)],
                None => e.norm_squared(),
            };
            r.to_f64_lossy() < thr * thr
        })
        .collect();
    let inlier_ratio = inliers.len() as f64 / c.len() as f64;
    let pruned = subsets[chosen].iter().map(|&v| kept[v]).collect();
    Ok(EstimateResult {
        transform,
        inliers,
        inlier_ratio,
        gnc_inlier_ratio: gnc_ratio,
        kept,
        pruned,
        candidates,
        chosen,
        strategy,
        clique_invoked,
        clique_exact,
        graph_time,
        clique_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_4dof_transform, rotation_angle_between};
    use crate::matcher::Correspondence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(seed: u64, n: usize, inlier_ratio: f64) -> (CorrespondenceSet<f64>, RigidTransform<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_4dof_transform(seed, 5.0, std::f64::consts::PI);
        let n_in = (n as f64 * inlier_ratio).round() as usize;
        let pairs = (0..n)
            .map(|k| {
                let p = Point3::new(
                    rng.random::<f64>() * 10.0,
                    rng.random::<f64>() * 10.0,
                    rng.random::<f64>() * 3.0,
                );
                let q = if k < n_in {
                    t.apply(&p)
                        + nalgebra::Vector3::new(
                            rng.random::<f64>() - 0.5,
                            rng.random::<f64>() - 0.5,
                            rng.random::<f64>() - 0.5,
                        ) * 0.02
                } else {
                    t.apply(&Point3::new(
                        rng.random::<f64>() * 10.0,
                        rng.random::<f64>() * 10.0,
                        rng.random::<f64>() * 3.0,
                    ))
                };
                Correspondence::new(p, q, rng.random())
            })
            .collect();
        (CorrespondenceSet::new(pairs), t)
    }

    #[test]
    fn nms_examples() {
        let o = Point3::origin();
        let c = CorrespondenceSet::new(vec![
            Correspondence::new(o, o, 0.4),
            Correspondence::new(o, Point3::new(1.0, 0.0, 0.0), 0.9),
            Correspondence::new(Point3::new(1.0, 0.0, 0.0), o, 0.1),
        ]);
        assert_eq!(nms_indices(&c, 0.05), vec![1, 2]);
    }

    #[test]
    fn nms_matches_quadratic_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<_> = (0..200)
            .map(|_| {
                let p = Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.2);
                Correspondence::new(p, p, (rng.random::<f64>() * 10.0).floor())
            })
            .collect();
        let c = CorrespondenceSet::new(pairs);
        let mut order: Vec<usize> = (0..200).collect();
        order.sort_by(|&a, &b| c.pairs[b].score.partial_cmp(&c.pairs[a].score).unwrap().then(a.cmp(&b)));
        let mut kept: Vec<usize> = Vec::new();
        for k in order {
            if kept.iter().all(|&j| (c.pairs[j].p - c.pairs[k].p).norm() >= 0.1) {
                kept.push(k);
            }
        }
        kept.sort_unstable();
        assert_eq!(nms_indices(&c, 0.1), kept);
    }

    #[test]
    fn high_inlier_ratio_skips_clique() {
        let (c, t) = synthetic(1, 200, 0.9);
        let r = estimate(&c, &[], &[], &EstimatorConfig::default()).unwrap();
        assert_eq!(r.strategy, Strategy::GncOnly);
        assert!(!r.clique_invoked);
        assert!((r.transform.translation - t.translation).norm() < 0.05);
    }

    #[test]
    fn low_inlier_ratio_uses_cliques() {
        let (c, t) = synthetic(2, 500, 0.1);
        let r = estimate(&c, &[], &[], &EstimatorConfig::default()).unwrap();
        assert_eq!(r.strategy, Strategy::MacGnc);
        assert!(r.clique_invoked);
        assert!((r.transform.translation - t.translation).norm() < 0.05);
        assert!(rotation_angle_between(&r.transform.rotation, &t.rotation).to_degrees() < 1.0);
        assert!(r.report().lines().count() >= 4);
    }

    #[test]
    fn too_few_survivors_is_insufficient_data() {
        let o = Point3::origin();
        let c = CorrespondenceSet::new(vec![Correspondence::new(o, o, 1.0); 10]);
        assert!(matches!(
            estimate(&c, &[], &[], &EstimatorConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EstimatorConfig::<f64>::default();
        cfg.validate().unwrap();
        cfg.deltas = vec![0.2, 0.1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn f32_estimate_runs() {
        let (c, t) = synthetic(3, 200, 0.7);
        let r = estimate(&c.cast::<f32>(), &[], &[], &EstimatorConfig::<f32>::default()).unwrap();
        let tt: RigidTransform<f32> = t.cast();
        assert!((r.transform.translation - tt.translation).norm() < 0.05);
    }
}
