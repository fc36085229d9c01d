//! Dense f64 tensors and reverse-mode differentiation.
//!
//! The engine is deliberately small: row-major tensors up to rank 4, a
//! Wengert-list [`Tape`] with the dozen operations the models and attacks
//! need, and fixed-order arithmetic kernels so that a seeded run is
//! bit-reproducible.

pub mod conv;
pub mod kernels;
mod tape;

pub use tape::{Tape, Var};

use crate::error::{shape_err, Result};
use std::fmt;

/// Dimension list of a tensor. All dims are at least 1; rank 4 covers
/// everything this crate builds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(shape_err(format!("rank must be 1..=4, got {}", dims.len())));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(shape_err(format!("zero-sized dim in {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Row-major n-dimensional array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let shape = Shape::new(dims).expect("valid dims");
        let n = shape.numel();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(dims: &[usize], v: f64) -> Tensor {
        let mut t = Tensor::zeros(dims);
        t.data.fill(v);
        t
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: Shape(vec![1]), data: vec![v] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(shape_err(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(shape_err(format!(
                "cannot reshape {} elements to {shape}",
                self.data.len()
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean distance to another tensor of the same shape.
    pub fn dist2(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}
