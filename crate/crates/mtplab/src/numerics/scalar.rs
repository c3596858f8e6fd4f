//! Float abstraction so graph code can run in `f32` (training) or `f64`
//! (gradient checking) without duplication.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for tensors and graph ops.
///
/// `num_traits::Float` supplies the math; the extra conversions let shared
/// code mix in `f64` constants (epsilons, RoPE angles) without losing the
/// target precision until the final cast.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Sum + Copy + Send + Sync + Debug + Display + Default + 'static
{
    /// Short dtype tag used in error messages and file headers.
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;

    /// Named to avoid clashing with `num_traits::ToPrimitive::to_f64`.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
