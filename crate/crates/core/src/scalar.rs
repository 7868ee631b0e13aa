use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the plant, channel statistics and spectrum
/// geometry. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("every f64 converts to a float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Clamps to `[-limit, limit]`; `limit` must be non-negative.
    fn clamp_abs(self, limit: Self) -> Self {
        self.max(-limit).min(limit)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_abs_is_symmetric() {
        assert_eq!(3.0f64.clamp_abs(2.0), 2.0);
        assert_eq!((-3.0f32).clamp_abs(2.0), -2.0);
        assert_eq!(0.5f64.clamp_abs(2.0), 0.5);
    }

    #[test]
    fn conversions_round_trip_exact_values() {
        assert_eq!(<f32 as Scalar>::of(0.25).to_f64_lossy(), 0.25);
        assert_eq!(<f64 as Scalar>::of(3700.0), 3700.0);
    }
}
