//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the energy models are written against (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

/// Relative closeness test with an absolute floor of `rtol` for values near zero.
pub fn close<S: Scalar>(a: S, b: S, rtol: S) -> bool {
    let diff = (a - b).abs();
    let scale = a.abs().max(b.abs()).max(S::one());
    diff <= rtol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn close_is_relative_for_large_values() {
        assert!(close(1.0e6_f64, 1.0e6 + 1.0e-4, 1e-9));
        assert!(!close(1.0e6_f64, 1.0e6 + 1.0e-2, 1e-9));
    }

    #[test]
    fn close_has_absolute_floor_near_zero() {
        assert!(close(0.0_f64, 1e-10, 1e-9));
        assert!(!close(0.0_f32, 1e-3, 1e-6));
    }
}
