//! Floating point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the linear algebra, network and pruning code is written against.
///
/// Implemented for `f32` and `f64`. Reported tolerances throughout the crate
/// refer to `f64`; `f32` runs are supported but only meet single-precision
/// accuracy.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine epsilon of the type as an `f64`.
    const EPS: f64;

    /// Lossy conversion from `f64`; always succeeds for finite input.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const EPS: f64 = f64::EPSILON;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const EPS: f64 = f32::EPSILON as f64;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
