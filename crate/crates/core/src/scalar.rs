use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point scalar the numerical core is generic over.
///
/// Implemented for `f32` and `f64`.
pub trait Real: NdFloat + FromPrimitive + Sum + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where T: NdFloat + FromPrimitive + Sum + 'static {}
