//! Dense rank-2 arrays, row-major.
//!
//! Everything the models handle is a matrix: column vectors are `[n, 1]`,
//! scalars are `[1, 1]`, embedding tables are `[vocab, dim]`. The public
//! constructor rejects non-finite values; values produced *inside* the graph
//! are allowed to overflow so that divergence can be detected downstream
//! (the optimizer aborts on non-finite gradients, the training loop on
//! non-finite loss).

use super::real::Real;
use super::ComputeError;

#[derive(Clone, Debug, PartialEq)]
pub struct NumArray<R: Real> {
    shape: [usize; 2],
    data: Vec<R>,
}

impl<R: Real> NumArray<R> {
    /// Validating constructor: extents must be positive, `data` must have
    /// `rows * cols` entries, and every value must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<R>) -> Result<Self, ComputeError> {
        if rows == 0 || cols == 0 {
            return Err(ComputeError::Dimension(format!(
                "array extents must be positive, got [{rows}, {cols}]"
            )));
        }
        if data.len() != rows * cols {
            return Err(ComputeError::Dimension(format!(
                "shape [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(ComputeError::NonFinite(format!("{v}")));
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    /// Unchecked constructor for values computed by graph operations.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<R>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            shape: [rows, cols],
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![R::zero(); rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: R) -> Self {
        Self::from_raw(rows, cols, vec![v; rows * cols])
    }

    /// Column vector from a slice of `f64` values.
    pub fn column_from_f64(values: &[f64]) -> Result<Self, ComputeError> {
        Self::new(
            values.len(),
            1,
            values.iter().map(|&v| R::from_f64(v)).collect(),
        )
    }

    /// A `[1, 1]` scalar array.
    pub fn scalar_value(v: R) -> Self {
        Self::from_raw(1, 1, vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == [1, 1]
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn at(&self, row: usize, col: usize) -> R {
        self.data[row * self.shape[1] + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: R) {
        self.data[row * self.shape[1] + col] = v;
    }

    /// The single value of a `[1, 1]` array.
    pub fn scalar(&self) -> R {
        debug_assert!(self.is_scalar(), "scalar() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[R] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self::from_raw(
            self.shape[0],
            self.shape[1],
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute entry, 0 for the empty product.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }

    /// `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Self, scale: R) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + scale * b;
        }
    }

    /// Sum of squares of all entries, accumulated in f64.
    pub fn sum_squares_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Convert between precisions through f64.
    pub fn cast<S: Real>(&self) -> NumArray<S> {
        NumArray::from_raw(
            self.shape[0],
            self.shape[1],
            self.data.iter().map(|v| S::from_f64(v.as_f64())).collect(),
        )
    }
}
