//! Dense row-major f64 tensor.

use super::{DiffError, Result};

/// N-dimensional array of f64 values with an optional gradient buffer.
///
/// Invariants: `data.len() == product(shape)`, and `grad`, when present, has
/// the same length as `data`. The shape is fixed after construction; values
/// stay mutable so the optimizer can update parameters in place.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(DiffError::ShapeMismatch {
                op: "tensor",
                detail: format!("zero-sized dimension in {shape:?}"),
            });
        }
        if numel(&shape) != data.len() {
            return Err(DiffError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} wants {} values, got {}", numel(&shape), data.len()),
            });
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: true })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor { shape, data: vec![0.0; n], grad: None, requires_grad: true }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = numel(&shape);
        Tensor { shape, data: vec![value; n], grad: None, requires_grad: true }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], grad: None, requires_grad: true }
    }

    /// Marks the tensor as a non-learnable buffer (e.g. batch-norm running stats).
    pub fn buffer(mut self) -> Self {
        self.requires_grad = false;
        self
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

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(DiffError::ShapeMismatch {
                op: "set_grad",
                detail: format!("grad length {} vs {} values", grad.len(), self.data.len()),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn grad_shape_checked() {
        let mut t = Tensor::zeros(vec![4]);
        assert!(t.set_grad(vec![1.0; 4]).is_ok());
        assert!(t.set_grad(vec![1.0; 3]).is_err());
    }
}
