//! Floating-point abstraction the numeric containers are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Scalar type for grids, kernels, and reductions.
///
/// Every container in this crate defaults to `f64`; `f32` is the other
/// implementor. The bounds are the intersection the kernels actually use.
pub trait Scalar: Float + FromPrimitive + Sum<Self> + Debug + Display {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant to `T`. Panics only if `T` cannot represent
/// finite `f64` values at all, which neither implementor does.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite f64 constant")
}

/// Widens a scalar to `f64` (exact for both implementors).
#[inline]
pub fn upcast<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("scalar widens to f64")
}
