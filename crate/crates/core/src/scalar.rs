//! Floating-point abstraction used by the geometry and metric code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar for box geometry and metrics: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Converts an `f64` constant into this scalar.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable in scalar type")
    }

    /// Exact ratio of two small integers, rounded once.
    fn ratio(numerator: usize, denominator: usize) -> Self {
        Self::lit(numerator as f64) / Self::lit(denominator as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
