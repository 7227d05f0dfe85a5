use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{DiffError, Result};
use crate::Real;

/// A dense row-major tensor. Cloning is cheap: handles share one allocation.
///
/// Values are fixed once the tensor is created; the two sanctioned mutations
/// are gradient accumulation during a backward pass and in-place parameter
/// updates by the optimizer between forward passes.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

struct TensorInner {
    shape: Vec<usize>,
    values: RefCell<Vec<Real>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Real>>>,
}

impl Tensor {
    /// Constant tensor; never receives a gradient.
    pub fn new(shape: &[usize], values: Vec<Real>) -> Result<Self> {
        Self::build(shape, values, false)
    }

    /// Learnable leaf tensor; `backward` accumulates into its gradient.
    pub fn param(shape: &[usize], values: Vec<Real>) -> Result<Self> {
        Self::build(shape, values, true)
    }

    fn build(shape: &[usize], values: Vec<Real>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(DiffError::InvalidArgument {
                context: "tensor",
                message: format!("zero extent in shape {shape:?}"),
            });
        }
        if numel != values.len() {
            return Err(DiffError::InvalidArgument {
                context: "tensor",
                message: format!("shape {shape:?} needs {numel} values, got {}", values.len()),
            });
        }
        Ok(Tensor {
            inner: Rc::new(TensorInner {
                shape: shape.to_vec(),
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
            }),
        })
    }

    /// Internal constructor for kernel outputs.
    pub(crate) fn output(shape: Vec<usize>, values: Vec<Real>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "kernel produced a non-finite value"
        );
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel])
    }

    pub fn scalar(v: Real) -> Self {
        Self::new(&[1], vec![v]).expect("scalar shape is valid")
    }

    /// Constant row, shape `[1, d]`.
    pub fn row(values: Vec<Real>) -> Result<Self> {
        let d = values.len();
        Self::new(&[1, d], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Number of rows and columns of a 2-d tensor.
    pub fn dims2(&self, kernel: &'static str) -> Result<(usize, usize)> {
        match self.inner.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(DiffError::InvalidArgument {
                context: kernel,
                message: format!("expected a 2-d tensor, got shape {:?}", self.inner.shape),
            }),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn values(&self) -> Ref<'_, Vec<Real>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<Real> {
        self.inner.values.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self) -> Result<Real> {
        if self.numel() != 1 {
            return Err(DiffError::NonScalarLoss {
                numel: self.numel(),
            });
        }
        Ok(self.inner.values.borrow()[0])
    }

    /// In-place overwrite, used by optimizers and checkpoint restore.
    /// Existing tapes must be dropped first; the old values are gone.
    pub fn set_values(&self, values: &[Real]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(DiffError::InvalidArgument {
                context: "set_values",
                message: format!("expected {} values, got {}", self.numel(), values.len()),
            });
        }
        self.inner.values.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Copy of the accumulated gradient, if any has flowed here.
    pub fn grad(&self) -> Option<Vec<Real>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[Real]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn grad_clone(&self) -> Option<Vec<Real>> {
        self.inner.grad.borrow().clone()
    }

    pub(crate) fn seed_grad(&self, value: Real) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => g[0] += value,
            None => *slot = Some(vec![value]),
        }
    }

    /// Two handles referring to the same allocation.
    pub fn same_tensor(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &self.inner.values.borrow())
            .finish()
    }
}
