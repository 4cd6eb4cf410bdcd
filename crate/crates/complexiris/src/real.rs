//! Scalar precision abstraction.
//!
//! Everything numeric is generic over [`Real`], instantiated at `f32`
//! (training speed) or `f64` (tests, gradient checks).

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + FftNum
    + Display
    + LowerExp
    + Debug
    + Default
    + 'static
{
    /// Bit width of the representation, recorded in serialized tensors.
    const BITS: u8;

    /// Lossy conversion from an `f64` literal.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    fn from_usize_(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize fits")
    }

    fn to_f64_(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {
    const BITS: u8 = 32;
}

impl Real for f64 {
    const BITS: u8 = 64;
}
