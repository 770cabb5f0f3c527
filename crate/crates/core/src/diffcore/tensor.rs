use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Flat numeric array with shape metadata and an optional gradient buffer.
///
/// Invariants: `product(shape) == data.len()`, the gradient (when present)
/// has the same length as the data, and entries are finite after any
/// completed operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tensor<S: Scalar> {
    data: Vec<S>,
    shape: Vec<usize>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(data: Vec<S>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self {
            data,
            shape,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            data: vec![S::zero(); len],
            shape,
            grad: None,
        }
    }

    /// 1-D tensor over the given values.
    pub fn from_vec(data: Vec<S>) -> Self {
        let shape = vec![data.len()];
        Self {
            data,
            shape,
            grad: None,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); len])
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Accumulate `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[S]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "gradient length {} vs data length {}",
                delta.len(),
                self.data.len()
            )));
        }
        let grad = self.grad_mut();
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    /// Check the finiteness invariant over data (and gradient if present).
    pub fn check_finite(&self) -> Result<()> {
        if !all_finite(&self.data) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        if let Some(g) = &self.grad {
            if !all_finite(g) {
                return Err(Error::NonFinite("tensor gradient".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_len() {
        assert!(Tensor::new(vec![1.0f64, 2.0], vec![3]).is_err());
        let t = Tensor::new(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn rejects_non_finite_data() {
        assert!(Tensor::new(vec![1.0f64, f64::NAN], vec![2]).is_err());
        assert!(Tensor::new(vec![f64::INFINITY], vec![1]).is_err());
    }

    #[test]
    fn grad_matches_data_length() {
        let mut t = Tensor::from_vec(vec![1.0f64, 2.0]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0, 1.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
