//! Scalar abstraction and small vector helpers.
//!
//! Everything in this crate is generic over [`Real`] so that solvers can be
//! instantiated at `f32` or `f64`. The tolerance budgets quoted throughout the
//! test suites assume `f64`; the crate root exposes `f64` aliases for the
//! common types.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar used by all solvers and operators.
pub trait Real:
    Float + NumAssign + FromPrimitive + Sum + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal; panics only on non-representable input.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Euclidean norm.
pub fn norm2<F: Real>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

/// Max-magnitude norm; 0 for an empty slice.
pub fn norm_inf<F: Real>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Euclidean distance between two slices of equal length.
pub fn dist2<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
        .sqrt()
}

/// Max-magnitude of the difference.
pub fn dist_inf<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(F::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}
