//! Floating point abstraction shared by the mapping core.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type the mapping core is generic over: `f32` or `f64`.
pub trait Scalar:
    'static
    + Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Send
    + Sync
    + Debug
    + Display
    + LowerExp
{
    /// Smallest total probability mass the filter will normalise by.
    fn mass_floor() -> Self;

    /// Tolerance used when validating unit quaternions.
    fn unit_tolerance() -> Self;

    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    #[inline]
    fn mass_floor() -> Self {
        1e-300
    }

    #[inline]
    fn unit_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    #[inline]
    fn mass_floor() -> Self {
        f32::MIN_POSITIVE
    }

    #[inline]
    fn unit_tolerance() -> Self {
        // 1e-9 is below f32 resolution around 1.0
        8.0 * f32::EPSILON
    }
}

/// `floor` as a signed voxel/cell index.
#[inline]
pub(crate) fn floor_index<T: Scalar>(v: T) -> i64 {
    v.floor().to_i64().unwrap_or(if v > T::zero() { i64::MAX } else { i64::MIN })
}
