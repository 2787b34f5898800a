//! Scalar abstraction shared by tables, learners, oracles and the network.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Value arithmetic in the experiments is `f64`; the network can run in
/// `f32` where throughput matters.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion from a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// True when `p` is a probability, i.e. lies in `[0, 1]` (NaN is rejected).
#[inline]
pub fn is_probability<T: Scalar>(p: T) -> bool {
    p >= T::zero() && p <= T::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion() {
        assert_eq!(<f32 as Scalar>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Scalar>::count(3), 3.0);
    }

    #[test]
    fn probability_bounds() {
        assert!(is_probability(0.0f64));
        assert!(is_probability(1.0f64));
        assert!(!is_probability(1.0f64 + 1e-12));
        assert!(!is_probability(f64::NAN));
    }
}
