//! Scalar abstraction shared by the geometry and tensor code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the generic geometry and convolution routines.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless for small integers such as channel counts.
    fn from_usize_exact(v: usize) -> Self {
        Self::from_usize(v).expect("integer representable as scalar")
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn halve<T: Scalar>(v: T) -> T {
        v / T::from_usize_exact(2)
    }

    #[test]
    fn generic_arithmetic_works_for_both_precisions() {
        assert_eq!(halve(3.0f32), 1.5);
        assert_eq!(halve(3.0f64), 1.5);
        assert_eq!(f32::from_f64_lossy(0.25).to_f64_lossy(), 0.25);
    }
}
