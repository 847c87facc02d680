//! Scalar abstraction shared by every solver in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the solvers are generic over (`f32` or `f64`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Display + Send + Sync + 'static {
    /// Converts an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// A relative tolerance of `v`, floored at `floor_ulps` machine epsilons so
    /// that thresholds tuned for `f64` stay meaningful in single precision.
    fn rel_tol(v: f64, floor_ulps: f64) -> Self {
        let eps = Self::default_epsilon().to_f64().unwrap_or(f64::EPSILON);
        Self::lit(v.max(floor_ulps * eps))
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
