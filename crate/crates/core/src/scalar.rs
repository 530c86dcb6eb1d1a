//! Scalar abstraction so the whole stack runs in either f32 or f64.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for tensors, parameters and losses.
///
/// `f32` is the training default; `f64` is used wherever oracle or
/// finite-difference tolerances demand it.
pub trait Scalar:
    Float
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Serialize
    + DeserializeOwned
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        num_traits::cast(v).expect("f64 conversion")
    }
    fn from_usize_(v: usize) -> Self {
        num_traits::cast(v).expect("usize conversion")
    }
    fn to_f64_(self) -> f64 {
        num_traits::cast(self).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
