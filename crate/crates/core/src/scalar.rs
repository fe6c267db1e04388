//! Scalar abstraction shared by the numeric kernels.
//!
//! Assignment, loss and pose routines are written once against [`Real`] and
//! instantiated for `f32` and `f64`. Scene data (meters, point clouds) and the
//! encoder stay in `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the generic kernels.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    fn machine_eps() -> Self;
}

impl Real for f32 {
    fn machine_eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn machine_eps() -> Self {
        f64::EPSILON
    }
}

/// Numerically stable `log(sum(exp(values)))`. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn log_sum_exp<T: Real>(values: impl IntoIterator<Item = T> + Clone) -> T {
    let max = values
        .clone()
        .into_iter()
        .fold(T::lit(f64::NEG_INFINITY), |m, v| if v > m { v } else { m });
    if !max.is_finite() {
        return max;
    }
    let sum = values.into_iter().fold(T::zero(), |acc, v| acc + (v - max).exp());
    max + sum.ln()
}
