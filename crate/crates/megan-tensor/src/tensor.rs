//! Dense row-major matrices of `f64`.
//!
//! Everything in this crate is a matrix: scalars are `1 × 1`, row vectors
//! `1 × w`, column vectors `h × 1`. Higher-rank data (such as per-pair bond
//! features) is flattened into matrix form by the caller before it enters
//! the engine. All arithmetic is double precision; the gradient checks that
//! validate every backward rule need the head-room, and at the scale this
//! engine targets the cost over single precision is irrelevant.

/// Errors shared by the whole engine.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    /// Operand shapes do not line up for the named operation.
    #[error("shape mismatch in {op}: left {left_rows}x{left_cols}, right {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    /// An index or size argument is out of range for the named operation.
    #[error("invalid argument in {op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
    /// The loss handed to backward has no differentiable parameter among
    /// its ancestors, so no gradient can exist.
    #[error("loss is not connected to any trainable parameter")]
    GraphDetached,
    /// A non-finite value appeared in the output of an operation. Only
    /// checked in debug builds; release builds skip the scan.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// A dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    /// Wrap an existing row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::InvalidArgument {
                op: "from_vec",
                message: format!("{} values cannot fill {rows}x{cols}", data.len()),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Build from nested rows; rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::InvalidArgument {
                    op: "from_rows",
                    message: format!("ragged rows: expected {c} columns, found {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor { rows: r, cols: c, data })
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `self += scale * other`, used by gradient accumulation and Adam.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<(), TensorError> {
        if !self.same_shape(other) {
            return Err(shape_err("add_scaled", self, other));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left_rows: left.rows(),
        left_cols: left.cols(),
        right_rows: right.rows(),
        right_cols: right.cols(),
    }
}
