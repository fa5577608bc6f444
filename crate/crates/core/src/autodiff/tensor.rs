//! Dense tensors: a shape, contiguous values, and an optional gradient.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor with an optional same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![S::zero(); len], grad: None }
    }

    pub fn from_values(shape: &[usize], values: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), values, grad: None })
    }

    /// Single-element tensor of shape [1].
    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], values: vec![v], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    /// The value of a shape-[1] tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.values.len(), 1, "item() on non-scalar tensor");
        self.values[0]
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        if self.grad.is_none() {
            self.grad = Some(vec![S::zero(); self.values.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    /// Adds a buffer into the gradient, taking ownership when none exists yet.
    pub(crate) fn accumulate_grad(&mut self, g: Vec<S>) {
        debug_assert_eq!(g.len(), self.values.len());
        match &mut self.grad {
            None => self.grad = Some(g),
            Some(dst) => {
                for (d, s) in dst.iter_mut().zip(&g) {
                    *d += *s;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
