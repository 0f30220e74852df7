//! Scalar abstraction for the numeric core.
//!
//! Everything in this crate is generic over [`Real`], a small extension of
//! `num_traits::Float`. Concrete aliases for `f64` (the default precision for
//! experiments) and `f32` live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable by the policy/task/update machinery.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; panics only if the target type cannot
    /// represent ordinary finite constants at all.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant must convert")
    }

    /// Smallest probability fed to a logarithm. `1e-300` where representable
    /// (f64), otherwise the type's smallest positive normal value (f32).
    fn prob_floor() -> Self {
        let f = Self::of(1e-300);
        if f > Self::zero() {
            f
        } else {
            Self::min_positive_value()
        }
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
