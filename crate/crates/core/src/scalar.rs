//! Scalar abstraction shared by the geometric and linear-programming layers.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the generic math layers (`f32` or `f64`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance scaled to the precision of the type (~2e-9 for f64, ~2e-4 for f32).
    #[inline]
    fn tolerance() -> Self {
        Self::lit(Self::default_epsilon().as_f64().powf(0.55))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
