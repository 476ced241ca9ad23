//! Scalar abstraction: all numerics are generic over `Real`, implemented
//! for `f32` and `f64`. Tests run in `f64`; training may run in `f32`.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::distributions::uniform::SampleUniform;
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + SampleUniform
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` literal into the scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal convertible to scalar type")
    }

    /// Exact conversion of a count into the scalar type.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count convertible to scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Relative error with the floor used by all numerical oracles:
/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn rel_err<T: Real>(a: T, b: T) -> T {
    let denom = a.abs().max(b.abs()).max(T::lit(1e-12));
    (a - b).abs() / denom
}

/// Largest relative error over two equally long slices.
pub fn max_rel_err<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "max_rel_err: length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(T::zero(), T::max)
}
