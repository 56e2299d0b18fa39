use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type of tensors. Training runs in `f32`; gradient checks rerun
/// the same graphs in `f64` so that finite differences are not swamped by
/// rounding.
pub trait Scalar:
    Float
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// `exp` from the `libm` crate, identical across builds and platforms.
    fn portable_exp(self) -> Self;
    /// `ln` from the `libm` crate, identical across builds and platforms.
    fn portable_ln(self) -> Self;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn portable_exp(self) -> Self {
        libm::expf(self)
    }
    fn portable_ln(self) -> Self {
        libm::logf(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn portable_exp(self) -> Self {
        libm::exp(self)
    }
    fn portable_ln(self) -> Self {
        libm::log(self)
    }
}
