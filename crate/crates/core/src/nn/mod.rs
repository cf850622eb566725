//! From-scratch tensor operations with analytic reverse-mode gradients.
//!
//! Every op is a pair of free functions: a forward pass that returns its
//! output (plus whatever the backward pass needs), and a backward pass that
//! maps the upstream gradient to the input gradient while accumulating
//! parameter gradients into the parameter tensors' `grad` buffers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

mod activation;
mod conv;
mod layer;
mod linear;
mod norm;
mod optim;
mod pool;

pub use activation::{cross_entropy, relu, relu_backward, relu_inplace, softmax};
pub use conv::{conv2d_backward, conv2d_valid, ConvLayerState};
pub use layer::{Layer, Network};
pub use linear::{linear, linear_backward, LinearState};
pub use norm::{batchnorm2d, batchnorm2d_backward, batchnorm2d_eval_inplace, BatchNormCache, BatchNormState, Mode};
pub use optim::sgd_step;
pub use pool::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, adaptive_window, maxpool2d, maxpool2d_backward, pool_out_dim,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("{op}: expected shape {expected}, got {got:?}")]
    Shape { op: &'static str, expected: String, got: Vec<usize> },
    #[error("{op}: window {k} larger than input {h}x{w}")]
    WindowTooLarge { op: &'static str, k: usize, h: usize, w: usize },
    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("batchnorm: train mode needs at least 2 values per channel, got {0}")]
    InsufficientBatch(usize),
    #[error("batchnorm: running statistics are not initialized")]
    UninitializedRunningStats,
    #[error("cross_entropy: label {label} at index {index} outside [0, {classes})")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Element type of tensors: `f32` for training and inference, `f64` for
/// gradient checks.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must address valid, non-aliasing `m x k`, `k x n`
    /// and `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix operand: `ld` is the stored row length, `trans` reads
/// the stored matrix transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub ld: usize,
    pub trans: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], ld: usize) -> Self {
        Self { data, ld, trans: false }
    }

    pub fn t(data: &'a [T], ld: usize) -> Self {
        Self { data, ld, trans: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    /// Index one past the last element touched as an `r x c` logical matrix.
    fn extent(&self, r: usize, c: usize) -> usize {
        if r == 0 || c == 0 {
            return 0;
        }
        if self.trans {
            (c - 1) * self.ld + r
        } else {
            (r - 1) * self.ld + c
        }
    }
}

/// `c[m x n] (ldc) = a[m x k] * b[k x n] + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: Mat<T>, b: Mat<T>, c: &mut [T], ldc: usize, beta: T) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.extent(m, k) <= a.data.len(), "gemm: lhs out of bounds");
    assert!(b.extent(k, n) <= b.data.len(), "gemm: rhs out of bounds");
    assert!((m - 1) * ldc + n <= c.len(), "gemm: output out of bounds");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents checked above; `c` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        )
    }
}

/// N-dimensional row-major array with an optional gradient buffer.
/// Equality compares shape and values only.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape {shape:?}");
        Self { shape, data, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n], grad: None }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![v; n], grad: None }
    }

    /// A trainable tensor. Its gradient buffer is allocated on the first
    /// backward pass, so inference-only networks carry no gradient memory.
    pub fn param(shape: Vec<usize>, data: Vec<T>) -> Self {
        Self::new(shape, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape to {shape:?}");
        self.shape = shape;
        self
    }

    pub fn grad_mut(&mut self) -> &mut Vec<T> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.f64())).collect()),
        }
    }

    /// Shape as `[n, c, h, w]` or a shape error naming `op`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(NnError::Shape { op, expected: "N x C x H x W".into(), got: self.shape.clone() }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [n, k] => Ok([n, k]),
            _ => Err(NnError::Shape { op, expected: "N x K".into(), got: self.shape.clone() }),
        }
    }
}

pub(crate) fn check_same_shape<T>(op: &'static str, want: &[usize], got: &Tensor<T>) -> Result<()> {
    if got.shape != want {
        return Err(NnError::Shape { op, expected: format!("{want:?}"), got: got.shape.clone() });
    }
    Ok(())
}

/// Raw pointer shared across workers that write provably disjoint ranges.
#[derive(Clone, Copy)]
pub(crate) struct SharedMut<T>(*mut T);

unsafe impl<T: Send> Send for SharedMut<T> {}
unsafe impl<T: Send> Sync for SharedMut<T> {}

impl<T> SharedMut<T> {
    pub fn new(slice: &mut [T]) -> Self {
        Self(slice.as_mut_ptr())
    }

    pub fn ptr(&self) -> *mut T {
        self.0
    }

    /// # Safety
    /// `[offset, offset + len)` must lie inside the original slice and must
    /// not overlap any range obtained concurrently by another worker.
    pub unsafe fn slice<'a>(self, offset: usize, len: usize) -> &'a mut [T] {
        std::slice::from_raw_parts_mut(self.0.add(offset), len)
    }
}
