//! Rigid transforms and small geometric helpers.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Rotation about +z by `yaw` radians followed by `translation`.
    pub fn from_yaw(yaw: T, translation: Vector3<T>) -> Self {
        Self::new(yaw_matrix(yaw), translation)
    }

    pub fn from_matrix4(m: &Matrix4<T>) -> Self {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_matrix4(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> T {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det = (self.rotation.determinant() - T::one()).abs();
        gram.amax().max(det)
    }

    pub fn is_valid(&self, tol: T) -> bool {
        self.orthonormality_error() <= tol
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Yaw angle of the rotation, assuming roll = pitch = 0.
    pub fn yaw(&self) -> T {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        RigidTransform::new(
            self.rotation.map(|v| U::lit(v.to_f64_lossy())),
            self.translation.map(|v| U::lit(v.to_f64_lossy())),
        )
    }
}

/// Rotation matrix about +z.
pub fn yaw_matrix<T: Real>(yaw: T) -> Matrix3<T> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, T::zero(), s, c, T::zero(), T::zero(), T::zero(), T::one())
}

/// Rotation matrix about +x.
pub fn roll_matrix<T: Real>(roll: T) -> Matrix3<T> {
    let (s, c) = roll.sin_cos();
    Matrix3::new(T::one(), T::zero(), T::zero(), T::zero(), c, -s, T::zero(), s, c)
}

/// Rodrigues' formula for a rotation about `axis` (need not be unit) by `angle`.
pub fn axis_angle_matrix<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    let n = axis.norm();
    if n <= T::zero() {
        return Matrix3::identity();
    }
    let k = axis / n;
    let kx = k.cross_matrix();
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + kx * s + kx * kx * (T::one() - c)
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let rel = a.transpose() * b;
    let cos = ((rel.trace() - T::one()) / T::lit(2.0)).clamp(-T::one(), T::one());
    cos.acos()
}

/// Nearest rotation (Frobenius sense) to an arbitrary 3x3 matrix.
pub fn project_to_so3<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    u * d * v_t
}

/// Draws a yaw-plus-translation transform: yaw uniform in `[-max_yaw, max_yaw]`,
/// each translation component uniform in `[-max_translation, max_translation]`.
pub fn random_4dof_transform(seed: u64, max_translation: f64, max_yaw: f64) -> RigidTransform<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = symmetric_uniform(&mut rng, max_yaw);
    let t = Vector3::new(
        symmetric_uniform(&mut rng, max_translation),
        symmetric_uniform(&mut rng, max_translation),
        symmetric_uniform(&mut rng, max_translation),
    );
    RigidTransform::from_yaw(yaw, t)
}

fn symmetric_uniform(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width <= 0.0 {
        // consume a draw so the stream layout does not depend on the bounds
        let _: f64 = rng.random();
        return 0.0;
    }
    rng.random_range(-half_width..=half_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let t = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = random_4dof_transform(3, 5.0, 3.0);
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn zero_ranges_give_identity() {
        let t = random_4dof_transform(11, 0.0, 0.0);
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn same_seed_same_transform() {
        assert_eq!(
            random_4dof_transform(42, 10.0, 3.0),
            random_4dof_transform(42, 10.0, 3.0)
        );
    }

    #[test]
    fn random_transforms_keep_z_axis() {
        let ez = Vector3::z();
        for seed in 0..1000 {
            let t = random_4dof_transform(seed, 10.0, std::f64::consts::PI);
            assert!((t.rotation * ez - ez).norm() < 1e-12);
            assert!(t.translation.amax() <= 10.0);
            assert!(t.is_valid(1e-9));
        }
    }

    #[test]
    fn matrix4_round_trip() {
        let t = random_4dof_transform(5, 2.0, 1.0);
        let back = RigidTransform::from_matrix4(&t.to_matrix4());
        assert_eq!(t, back);
    }

    #[test]
    fn projection_returns_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, -0.05, 0.9, 0.2, 0.0, 0.1, 1.1);
        let r = project_to_so3(&m);
        let t = RigidTransform::new(r, Vector3::zeros());
        assert!(t.orthonormality_error() < 1e-12);
    }

    #[test]
    fn angle_between_yaws() {
        let a = yaw_matrix(0.1_f64);
        let b = yaw_matrix(0.4_f64);
        assert!((rotation_angle_between(&a, &b) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let t: RigidTransform<f32> = RigidTransform::from_yaw(0.5, Vector3::new(1.0, 2.0, 3.0));
        let back = t.compose(&t.inverse());
        assert!(back.translation.norm() < 1e-5);
    }
}
