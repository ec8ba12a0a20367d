//! Dense float64 tensors and a reverse-mode autodiff tape.
//!
//! A [`Tensor`] is a plain row-major value. Differentiation happens on a
//! [`Graph`]: leaves are registered on the graph (borrowing parameter storage
//! where possible), every op appends a node, and [`Graph::backward`] walks the
//! tape once in reverse. Reductions always run index-ascending so that
//! identical inputs give bit-identical outputs and gradients.

mod check;
mod graph;
mod kernels;

pub use check::{grad_check, grad_check_coords, relative_error, CoordCheck};
pub use graph::{Graph, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {message}")]
    Invalid { op: &'static str, message: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("masked_softmax: row {row} has no unmasked position")]
    FullyMasked { row: usize },
    #[error("cross_entropy: every target position is ignored")]
    AllIgnored,
    #[error("backward: {0}")]
    Backward(String),
}

pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Row-major nested construction for tests and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("tensor", "ragged rows"));
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Boolean mask that broadcasts against a tensor: each dimension either
/// matches the target or is 1. `true` marks a position that takes part.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<bool>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(
                "mask",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Mask { shape, data })
    }

    pub fn all(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Mask {
            shape,
            data: vec![true; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Materialises the mask at `target` shape.
    pub fn expand_to(&self, target: &[usize]) -> Result<Vec<bool>, TensorError> {
        let err = || TensorError::Shape {
            op: "mask broadcast",
            left: self.shape.clone(),
            right: target.to_vec(),
        };
        if self.shape.len() != target.len() {
            return Err(err());
        }
        if self.shape == target {
            return Ok(self.data.clone());
        }
        let mut strides = vec![0usize; target.len()];
        let mut acc = 1;
        for d in (0..target.len()).rev() {
            let dim = self.shape[d];
            if dim != target[d] && dim != 1 {
                return Err(err());
            }
            strides[d] = if dim == 1 { 0 } else { acc };
            acc *= dim;
        }
        let numel: usize = target.iter().product();
        let mut out = Vec::with_capacity(numel);
        let mut index = vec![0usize; target.len()];
        for _ in 0..numel {
            let src: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out.push(self.data[src]);
            for d in (0..target.len()).rev() {
                index[d] += 1;
                if index[d] < target[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn mask_broadcast() {
        let m = Mask::new(vec![2, 1, 3], vec![true, false, true, false, false, true]).unwrap();
        let e = m.expand_to(&[2, 2, 3]).unwrap();
        assert_eq!(
            e,
            vec![true, false, true, true, false, true, false, false, true, false, false, true]
        );
        assert!(m.expand_to(&[2, 2, 4]).is_err());
    }
}
