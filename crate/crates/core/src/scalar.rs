//! Floating point abstraction shared by all estimation code.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar usable by the estimators: `f32` or `f64`.
///
/// Math methods (`exp`, `ln`, `sqrt`, ...) come from [`RealField`]; conversions
/// from literals go through [`Scalar::lit`].
pub trait Scalar: RealField + Copy + ToPrimitive {
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count or index into this scalar type.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    fn epsilon() -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    #[inline]
    fn epsilon() -> Self {
        f64::EPSILON
    }
}
