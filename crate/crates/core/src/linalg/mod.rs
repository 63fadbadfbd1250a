//! Dense numerical kernels: singular value decomposition, linear sum
//! assignment and Sinkhorn normalization.
//!
//! Matrices are `ndarray::Array2<f64>` in standard (row-major) layout.

mod assignment;
mod sinkhorn;
mod svd;

pub use assignment::{hard_project, linear_sum_assignment, Assignment};
pub use sinkhorn::{sinkhorn, sinkhorn_backward, sinkhorn_traced, SinkhornTrace, SINKHORN_FLOOR};
pub use svd::{svd, svd_complex, ComplexSvd, SvdResult, MAX_SWEEPS, SVD_TOLERANCE};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit floats.
pub type Matrix = Array2<f64>;

/// Frobenius norm.
pub fn frobenius(a: &Matrix) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains non-finite entries")))
    }
}

pub(crate) fn ensure_square(a: &Matrix, what: &str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::dim(format!("{what} must be square, got {r}x{c}")));
    }
    Ok(r)
}
