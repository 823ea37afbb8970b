//! Dense arrays and a reverse-mode differentiation graph over them.
//!
//! Everything is 64-bit: the networks here are small, and exact oracle
//! comparisons plus finite-difference gradient checks matter more than
//! throughput. Any operation that produces a NaN or an infinity is an
//! error, not a silent value.

mod adam;
mod graph;
pub(crate) mod kernels;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::Padding;

use thiserror::Error;

/// Errors raised by array construction, graph ops, and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected} but got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: requires a rank-{rank} array, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        rank: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: input must not be empty")]
    Empty { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{op}: input is not a probability distribution (sum {sum})")]
    InvalidDistribution { op: &'static str, sum: f64 },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("graph cycle detected at node {node}")]
    CycleDetected { node: usize },
    #[error("optimizer step {step}: parameter {index} shape {param:?} does not match gradient shape {grad:?}")]
    OptimizerShapeMismatch {
        step: u64,
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
}

/// A dense row-major array of 64-bit floats.
///
/// `shape == []` denotes a scalar holding exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    /// Builds an array, checking that the data length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Array::new",
                expected: format!("{} values for shape {:?}", expected, shape),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// A rank-1 array over `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single value of a scalar array.
    pub fn as_scalar(&self) -> Result<f64, TensorError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(TensorError::BadRank {
                op,
                rank: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(TensorError::BadRank {
                op,
                rank: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub(crate) fn dims1(&self, op: &'static str) -> Result<usize, TensorError> {
        match self.shape[..] {
            [a] => Ok(a),
            _ => Err(TensorError::BadRank {
                op,
                rank: 1,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }
}
