//! Parameter initialization.
//!
//! Xavier-uniform for weight matrices, zeros for biases, and 1.0 for LSTM
//! forget-gate biases (set where the LSTM parameters are registered). Draws
//! go through f64 so a seed produces the same values at either precision.

use rand::Rng;

use super::array::NumArray;
use super::real::Real;

/// Uniform on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
/// `rows` is treated as fan_out, `cols` as fan_in.
pub fn xavier_uniform<R: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> NumArray<R> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| R::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    NumArray::from_raw(rows, cols, data)
}

pub fn zeros<R: Real>(rows: usize, cols: usize) -> NumArray<R> {
    NumArray::zeros(rows, cols)
}
