//! Scalar precision abstraction.
//!
//! Training defaults to `f32`; every gradient check and every test runs at
//! `f64`, because finite-difference comparisons are meaningless at single
//! precision. All random draws go through `f64` first so that a fixed seed
//! produces the same value stream regardless of the precision in use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Marker for the active floating-point width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

/// Scalar type the numeric core is generic over.
pub trait Real:
    num_traits::Float + Sum + Debug + Display + Copy + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32_bits(v: f32) -> Self;
    fn to_f32_lossy(self) -> f32;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32_bits(v: f32) -> Self {
        v
    }
    fn to_f32_lossy(self) -> f32 {
        self
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32_bits(v: f32) -> Self {
        v as f64
    }
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
}
