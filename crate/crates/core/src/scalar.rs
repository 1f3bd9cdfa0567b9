use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of model tensors.
///
/// Implemented for `f32` (training default) and `f64` (gradient checks and
/// wide-precision runs).
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Bit width, 32 or 64.
    const BITS: u32;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub fn leaky_relu<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x * T::lit(LEAKY_SLOPE)
    }
}

#[inline]
pub fn leaky_relu_grad<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}
