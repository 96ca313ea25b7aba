//! Scalar abstraction: model math is generic over the float width.
//!
//! Weights normally live in `f32`; gradient-check tests instantiate the
//! same code at `f64`. Loss and perplexity accumulation is always `f64`
//! regardless of the weight type.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    fn from_f64_(v: f64) -> Self;
    fn to_f64_(self) -> f64;
    /// Serialized form is always f32.
    fn to_f32_(self) -> f32;
    fn from_f32_(v: f32) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_(self) -> f64 {
        self as f64
    }
    #[inline]
    fn to_f32_(self) -> f32 {
        self
    }
    #[inline]
    fn from_f32_(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_(self) -> f64 {
        self
    }
    #[inline]
    fn to_f32_(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f32_(v: f32) -> Self {
        v as f64
    }
}
