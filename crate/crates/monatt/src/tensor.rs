//! Dense float64 tensors with optional gradient storage.
//!
//! A `Tensor` is a cheaply clonable handle to shared storage. Operations on
//! tensors live on [`crate::tape::Tape`], which records them for reverse-mode
//! differentiation. Gradients accumulate in place, so a parameter keeps its
//! gradient across several tape backwards until `zero_grad` is called.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

/// Handle to an n-dimensional float64 array. Clones share storage.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<TensorData>>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// New tensor without gradient tracking.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        if numel_of(&shape) != values.len() {
            return Err(Error::shape(
                "tensor-new",
                format!("shape {:?} holds {} values, got {}", shape, numel_of(&shape), values.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor-new", format!("zero extent in shape {shape:?}")));
        }
        Ok(Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                values,
                requires_grad: false,
                grad: None,
            })),
        })
    }

    /// New trainable parameter tensor (`requires_grad = true`).
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, values)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel_of(&shape);
        Tensor::new(shape, vec![0.0; n]).expect("zeros shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).expect("scalar shape")
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::new(vec![n], values).expect("vector shape")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    /// Extent of axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.inner.borrow().shape[i]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Copy of the stored values, row-major.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Borrow the values without copying.
    pub fn values_ref(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.values.as_slice())
    }

    /// The single stored value. Panics if the tensor is not a scalar.
    pub fn value(&self) -> f64 {
        let d = self.inner.borrow();
        assert_eq!(d.values.len(), 1, "value() on non-scalar tensor");
        d.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.borrow_mut().requires_grad = on;
    }

    /// Copy of the gradient, if backward has produced one.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Accumulate `delta` into the gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(delta.len(), d.values.len());
        match &mut d.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => d.grad = Some(delta.to_vec()),
        }
    }

    /// Overwrite stored values in place (same shape). Used by the optimizer.
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        let mut d = self.inner.borrow_mut();
        if values.len() != d.values.len() {
            return Err(Error::shape(
                "set-values",
                format!("expected {} values, got {}", d.values.len(), values.len()),
            ));
        }
        d.values.copy_from_slice(values);
        Ok(())
    }

    /// Error if any stored value is NaN or infinite.
    pub fn validate_finite(&self, what: &str) -> Result<()> {
        let d = self.inner.borrow();
        if d.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Deep copy with fresh storage; keeps `requires_grad`, drops the gradient.
    pub fn detached_copy(&self) -> Tensor {
        let d = self.inner.borrow();
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape: d.shape.clone(),
                values: d.values.clone(),
                requires_grad: d.requires_grad,
                grad: None,
            })),
        }
    }

    /// True if both handles point at the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Row `i` of a rank-2 tensor as a plain (non-tracked) vector tensor.
    /// For a differentiable gather use [`crate::tape::Tape::gather_row`].
    pub fn row(&self, i: usize) -> Result<Tensor> {
        let d = self.inner.borrow();
        if d.shape.len() != 2 {
            return Err(Error::shape("row", format!("rank {} != 2", d.shape.len())));
        }
        let (rows, cols) = (d.shape[0], d.shape[1]);
        if i >= rows {
            return Err(Error::bounds("row", format!("row {i} of {rows}")));
        }
        Tensor::new(vec![cols], d.values[i * cols..(i + 1) * cols].to_vec())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &d.shape)
            .field("requires_grad", &d.requires_grad)
            .field("values", &d.values)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_value_count_must_agree() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let t = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 0.5]);
        t.accumulate_grad(&[2.0, 0.5]);
        assert_eq!(t.grad().unwrap(), vec![3.0, 1.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn validate_finite_detects_nan() {
        let t = Tensor::vector(vec![1.0, f64::NAN]);
        assert!(t.validate_finite("x").is_err());
        let ok = Tensor::vector(vec![1.0, 2.0]);
        assert!(ok.validate_finite("x").is_ok());
    }

    #[test]
    fn row_extracts_untracked() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.row(1).unwrap().values(), vec![3.0, 4.0]);
        assert!(m.row(2).is_err());
    }
}
