//! Thin safe wrapper over `matrixmultiply` for the two float widths.

use std::fmt::Debug;

use num_traits::Float;

use super::Tensor;
use crate::{Error, Result};

/// Floating-point element usable by the inference kernels.
pub trait Real: Float + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Whether an operand is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `c = op(a)·op(b) + beta·c` with `op(a)` of shape `m×k` and `op(b)` of
/// shape `k×n`; all buffers are row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    ta: Trans,
    tb: Trans,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: lengths checked above match the strided views.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major affine layer `y = x·W + b` used by the inference kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    /// `w` is `inputs×outputs`; a missing bias is zero.
    pub fn from_tensors(w: &Tensor, b: Option<&Tensor>) -> Result<Self> {
        let [inputs, outputs] = w.shape();
        let bias = match b {
            Some(b) if b.shape() != [1, outputs] => {
                return Err(Error::shape("dense", format!("bias {:?} for weight {:?}", b.shape(), w.shape())))
            }
            Some(b) => b.data().iter().map(|&v| T::from_f64(v)).collect(),
            None => vec![T::zero(); outputs],
        };
        Ok(Dense {
            inputs,
            outputs,
            weight: w.data().iter().map(|&v| T::from_f64(v)).collect(),
            bias,
        })
    }

    /// Writes the `n×outputs` result into the front of `out`.
    pub fn forward(&self, x: &[T], n: usize, out: &mut [T]) {
        let out = &mut out[..n * self.outputs];
        gemm(Trans::No, Trans::No, n, self.inputs, self.outputs, &x[..n * self.inputs], &self.weight, T::zero(), out);
        for row in out.chunks_exact_mut(self.outputs) {
            for (o, b) in row.iter_mut().zip(&self.bias) {
                *o = *o + *b;
            }
        }
    }
}
