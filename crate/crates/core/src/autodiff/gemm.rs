//! Thin wrapper over `matrixmultiply` with explicit strides.

use super::Real;

/// Strided view of a row-major matrix: `(data, row_stride, col_stride)`.
pub(crate) struct View<'a> {
    pub data: &'a [Real],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [Real], cols: usize) -> Self {
        Self { data, rs: cols as isize, cs: 1 }
    }

    /// Transpose of a row-major `[rows, cols]` matrix.
    pub fn transposed(data: &'a [Real], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols as isize }
    }
}

/// `c = a·b + beta·c` with `a: [m, k]`, `b: [k, n]` and row-major `c: [m, n]`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: Real, c: &mut [Real]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: every index reached through the strides lies inside the given
    // slices: a spans (m-1)·rs + (k-1)·cs, which the callers size exactly.
    unsafe {
        #[cfg(not(feature = "f64"))]
        matrixmultiply::sgemm(m, k, n, 1.0, a.data.as_ptr(), a.rs, a.cs, b.data.as_ptr(), b.rs, b.cs, beta, c.as_mut_ptr(), n as isize, 1);
        #[cfg(feature = "f64")]
        matrixmultiply::dgemm(m, k, n, 1.0, a.data.as_ptr(), a.rs, a.cs, b.data.as_ptr(), b.rs, b.cs, beta, c.as_mut_ptr(), n as isize, 1);
    }
}
