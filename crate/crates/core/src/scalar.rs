//! Floating-point scalar abstraction shared by the metric and criterion math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar the efficiency math can run over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into this scalar type.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean of a non-empty slice, summed left to right.
pub(crate) fn mean<S: Scalar>(values: &[S]) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(S::zero(), |acc, &v| acc + v);
    Some(sum / S::from_count(values.len()))
}

/// True when `value` lies in the closed unit interval (NaN is rejected).
pub(crate) fn in_unit_interval<S: Scalar>(value: S) -> bool {
    value >= S::zero() && value <= S::one()
}
