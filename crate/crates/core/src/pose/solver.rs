use nalgebra::{Matrix3, Matrix6, Point3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle_matrix, RigidTransform};
use crate::scalar::Real;

/// Weighted least-squares rigid transform mapping `src` onto `dst`
/// (cross-covariance SVD with reflection correction).
pub fn svd_align<T: Real>(src: &[Point3<T>], dst: &[Point3<T>], weights: Option<&[T]>) -> Result<RigidTransform<T>> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            what: "correspondence endpoints",
            expected: src.len(),
            got: dst.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(Error::DimensionMismatch {
                what: "correspondence weights",
                expected: src.len(),
                got: w.len(),
            });
        }
    }
    let weight = |k: usize| weights.map_or(T::one(), |w| w[k]);
    let active = (0..src.len()).filter(|&k| weight(k) > T::zero()).count();
    if active < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 weighted pairs, got {active}"
        )));
    }
    let mut total = T::zero();
    let mut cp = Vector3::zeros();
    let mut cq = Vector3::zeros();
    for k in 0..src.len() {
        let w = weight(k);
        total += w;
        cp += src[k].coords * w;
        cq += dst[k].coords * w;
    }
    cp /= total;
    cq /= total;
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for k in 0..src.len() {
        let w = weight(k);
        let dp = src[k].coords - cp;
        let dq = dst[k].coords - cq;
        h += dp * dq.transpose() * w;
        scatter += dp * dp.transpose() * w;
    }
    let mut ev: Vec<T> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let tol = T::lit(1e-10).max(T::machine_eps() * T::lit(100.0));
    if ev[0] <= T::zero() || ev[1] <= ev[0] * tol {
        return Err(Error::Degenerate("source points are collinear".into()));
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let r = v * d * u.transpose();
    let t = cq - r * cp;
    Ok(RigidTransform::new(r, t))
}

fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(T::zero(), -v.z, v.y, v.z, T::zero(), -v.x, -v.y, v.x, T::zero())
}

/// Weighted Mahalanobis alignment: minimizes `Σ w_k e_kᵀ Ω_k e_k` with
/// `Ω_k` the supplied information matrices, by Gauss-Newton started from
/// the weighted SVD solution.
pub fn mahalanobis_align<T: Real>(
    src: &[Point3<T>],
    dst: &[Point3<T>],
    weights: &[T],
    info: &[Matrix3<T>],
) -> Result<RigidTransform<T>> {
    let scalar: Vec<T> = weights
        .iter()
        .zip(info)
        .map(|(w, o)| *w * o.trace() / T::lit(3.0))
        .collect();
    let mut est = svd_align(src, dst, Some(&scalar))?;
    for _ in 0..20 {
        let mut hess = Matrix6::<T>::zeros();
        let mut grad = Vector6::<T>::zeros();
        for k in 0..src.len() {
            if weights[k] <= T::zero() {
                continue;
            }
            let rp = est.rotation * src[k].coords;
            let e = dst[k].coords - (rp + est.translation);
            let mut j = nalgebra::Matrix3x6::<T>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&rp));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
            let jt_o = j.transpose() * info[k] * weights[k];
            hess += jt_o * j;
            grad += jt_o * e;
        }
        let Some(step) = hess.lu().solve(&(-grad)) else {
            break;
        };
        let w = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let angle = w.norm();
        if angle > T::zero() {
            est.rotation = axis_angle_matrix(&(w / angle), angle) * est.rotation;
        }
        est.translation += dt;
        if step.norm() < T::lit(1e-12).max(T::machine_eps() * T::lit(10.0)) {
            break;
        }
    }
    Ok(est)
}

/// Graduated non-convexity schedule for the truncated least-squares cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GncSchedule<T: Real> {
    /// Multiplier applied to the surrogate parameter each iteration.
    pub factor: T,
    pub max_iters: usize,
    /// Stop once the weighted cost changes by less than this.
    pub cost_tolerance: T,
}

impl<T: Real> Default for GncSchedule<T> {
    fn default() -> Self {
        Self {
            factor: T::lit(1.4),
            max_iters: 64,
            cost_tolerance: T::lit(1e-12),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GncOutcome<T: Real> {
    pub transform: RigidTransform<T>,
    pub weights: Vec<T>,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl<T: Real> GncOutcome<T> {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

fn residuals<T: Real>(
    t: &RigidTransform<T>,
    src: &[Point3<T>],
    dst: &[Point3<T>],
    info: Option<&[Matrix3<T>]>,
) -> Vec<T> {
    (0..src.len())
        .map(|k| {
            let e = dst[k] - t.apply(&src[k]);
            match info {
                Some(o) => (e.transpose() * o[k] * e)[(0, 0)],
                None => e.norm_squared(),
            }
        })
        .collect()
}

/// GNC-TLS weight of squared residual `r` at surrogate parameter `mu`.
pub fn tls_weight<T: Real>(r: T, mu: T, c2: T) -> T {
    if r >= (mu + T::one()) / mu * c2 {
        T::zero()
    } else if r <= mu / (mu + T::one()) * c2 {
        T::one()
    } else {
        ((c2 * mu * (mu + T::one()) / r).sqrt() - mu)
            .max(T::zero())
            .min(T::one())
    }
}

/// GNC-TLS: minimizes `Σ min(r_k, c̄²)` by annealing the TLS surrogate.
///
/// `r_k` is the squared Euclidean residual, or `e_kᵀ Σ_k⁻¹ e_k` when
/// covariances are given. Converged weights above 0.5 mark inliers.
pub fn gnc_tls<T: Real>(
    src: &[Point3<T>],
    dst: &[Point3<T>],
    cbar: T,
    schedule: &GncSchedule<T>,
    covariances: Option<&[Matrix3<T>]>,
) -> Result<GncOutcome<T>> {
    let n = src.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let info: Option<Vec<Matrix3<T>>> = match covariances {
        Some(c) => {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "covariances",
                    expected: n,
                    got: c.len(),
                });
            }
            Some(
                c.iter()
                    .map(|m| {
                        m.try_inverse()
                            .ok_or_else(|| Error::Degenerate("singular covariance".into()))
                    })
                    .collect::<Result<_>>()?,
            )
        }
        None => None,
    };
    let solve = |w: &[T]| match &info {
        Some(o) => mahalanobis_align(src, dst, w, o),
        None => svd_align(src, dst, Some(w)),
    };
    let c2 = cbar * cbar;
    let mut weights = vec![T::one(); n];
    let mut est = solve(&weights)?;
    let mut r = residuals(&est, src, dst, info.as_deref());
    let max_r = r.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let two = T::lit(2.0);
    let mut iterations = 0;
    if max_r > c2 {
        let mut mu = T::one() / (two * max_r / c2 - T::one());
        let mut prev_cost = T::lit(f64::INFINITY);
        for it in 0..schedule.max_iters {
            iterations = it + 1;
            for k in 0..n {
                weights[k] = tls_weight(r[k], mu, c2);
            }
            est = solve(&weights)?;
            r = residuals(&est, src, dst, info.as_deref());
            let cost = r.iter().zip(&weights).fold(T::zero(), |a, (rk, wk)| a + *rk * *wk);
            if (cost - prev_cost).abs() < schedule.cost_tolerance {
                break;
            }
            prev_cost = cost;
            mu *= schedule.factor;
        }
    }
    let inliers: Vec<bool> = weights.iter().map(|w| *w > T::lit(0.5)).collect();
    Ok(GncOutcome {
        transform: est,
        weights,
        inliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle_between;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * scale)
            .collect()
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = cloud(&mut rng, 10, 2.0);
        let t = svd_align(&p, &p, None).unwrap();
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.amax() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 10, 3.0);
        let truth = RigidTransform::from_yaw(30f64.to_radians(), Vector3::new(1.0, 2.0, 0.0));
        let q: Vec<_> = p.iter().map(|x| truth.apply(x)).collect();
        let t = svd_align(&p, &q, None).unwrap();
        assert!(rotation_angle_between(&t.rotation, &truth.rotation) < 1e-9);
        assert!((t.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn f32_instantiation() {
        let p: Vec<Point3<f32>> = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 2.0, 0.0),
            Point3::new(0.0, 0.0, 1.5),
        ];
        let truth = RigidTransform::<f32>::from_yaw(0.4, Vector3::new(0.5, -1.0, 2.0));
        let q: Vec<_> = p.iter().map(|x| truth.apply(x)).collect();
        let t = svd_align(&p, &q, None).unwrap();
        assert!((t.rotation - truth.rotation).amax() < 1e-5);
    }

    #[test]
    fn collinear_and_too_few_rejected() {
        let line: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(svd_align(&line, &line, None), Err(Error::Degenerate(_))));
        let two = &line[..2];
        assert!(svd_align(two, two, None).is_err());
    }

    #[test]
    fn reflection_is_corrected() {
        let p = vec![
            Point3::new(1.0_f64, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 1.0, 1.0),
        ];
        let q: Vec<_> = p.iter().map(|x| Point3::new(-x.x, x.y, x.z)).collect();
        let t = svd_align(&p, &q, None).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gnc_outlier_free_equals_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cloud(&mut rng, 50, 5.0);
        let truth = RigidTransform::from_yaw(1.1, Vector3::new(-2.0, 0.5, 0.3));
        let q: Vec<_> = p
            .iter()
            .map(|x| truth.apply(x) + Vector3::new(rng.random::<f64>(), rng.random(), rng.random()) * 0.01)
            .collect();
        let g = gnc_tls(&p, &q, 0.1, &GncSchedule::default(), None).unwrap();
        let s = svd_align(&p, &q, None).unwrap();
        assert!(rotation_angle_between(&g.transform.rotation, &s.rotation) < 1e-6);
        assert!((g.transform.translation - s.translation).norm() < 1e-6);
        assert_eq!(g.inlier_count(), 50);
    }

    #[test]
    fn gnc_rejects_half_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = cloud(&mut rng, 100, 10.0);
        let truth = RigidTransform::from_yaw(-0.7, Vector3::new(3.0, 1.0, -0.5));
        let q: Vec<_> = p
            .iter()
            .enumerate()
            .map(|(k, x)| {
                if k % 2 == 0 {
                    truth.apply(x)
                } else {
                    Point3::new(rng.random::<f64>(), rng.random(), rng.random()) * 10.0
                }
            })
            .collect();
        let g = gnc_tls(&p, &q, 0.1, &GncSchedule::default(), None).unwrap();
        assert!((g.transform.translation - truth.translation).norm() < 0.01);
        assert!(rotation_angle_between(&g.transform.rotation, &truth.rotation).to_degrees() < 0.5);
    }

    #[test]
    fn isotropic_covariance_matches_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = cloud(&mut rng, 60, 8.0);
        let truth = RigidTransform::from_yaw(0.3, Vector3::new(1.0, -1.0, 0.2));
        let q: Vec<_> = p
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let noise = Vector3::new(rng.random::<f64>(), rng.random(), rng.random()) * 0.02;
                if k % 3 == 0 {
                    Point3::new(rng.random::<f64>(), rng.random(), rng.random()) * 8.0
                } else {
                    truth.apply(x) + noise
                }
            })
            .collect();
        let sigma = 0.5;
        let cov = vec![Matrix3::identity() * (sigma * sigma); p.len()];
        let sched = GncSchedule::default();
        let e = gnc_tls(&p, &q, 0.1, &sched, None).unwrap();
        let m = gnc_tls(&p, &q, 0.1 / sigma, &sched, Some(&cov)).unwrap();
        assert_eq!(e.inliers, m.inliers);
        assert!(rotation_angle_between(&e.transform.rotation, &m.transform.rotation) < 1e-6);
        assert!((e.transform.translation - m.transform.translation).norm() < 1e-6);
    }
}
