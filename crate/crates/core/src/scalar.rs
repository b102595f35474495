//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
///
/// Experiments and file formats use `f64`; the math is written once against
/// this trait so single-precision evaluation is available for comparison.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for literals and config values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
