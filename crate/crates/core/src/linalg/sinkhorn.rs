//! Log-domain Sinkhorn normalization with an exact reverse pass.

use ndarray::Zip;

use super::{ensure_finite, ensure_square, Matrix};
use crate::error::{Error, Result};

/// Smallest entry emitted by [`sinkhorn`].
pub const SINKHORN_FLOOR: f64 = 1e-30;

/// Intermediate matrices of a Sinkhorn run, kept for differentiation.
#[derive(Debug, Clone)]
pub struct SinkhornTrace {
    tau: f64,
    /// `exp` of the log-matrix after each half step (rows, then columns).
    halves: Vec<Matrix>,
}

/// Subtracts the log-sum-exp of each lane in place and writes `exp` of the
/// normalized values to `probs`.
fn normalize_lanes<'a>(
    lanes: impl Iterator<Item = ndarray::ArrayViewMut1<'a, f64>>,
    probs: impl Iterator<Item = ndarray::ArrayViewMut1<'a, f64>>,
) {
    for (mut lane, mut p) in lanes.zip(probs) {
        let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Zip::from(&mut p).and(&lane).for_each(|e, &x| *e = (x - m).exp());
        let s = p.sum();
        let lse = m + s.ln();
        lane.mapv_inplace(|x| x - lse);
        p.mapv_inplace(|e| e / s);
    }
}

fn run(scores: &Matrix, tau: f64, iters: usize, keep: bool) -> Result<(Matrix, Vec<Matrix>)> {
    ensure_square(scores, "sinkhorn scores")?;
    ensure_finite(scores, "sinkhorn scores")?;
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("sinkhorn temperature must be positive, got {tau}")));
    }
    if iters == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    let mut l = scores.mapv(|x| x / tau);
    let mut p = Matrix::zeros(l.raw_dim());
    let mut halves = Vec::with_capacity(if keep { 2 * iters } else { 0 });
    for _ in 0..iters {
        normalize_lanes(l.rows_mut().into_iter(), p.rows_mut().into_iter());
        if keep {
            halves.push(p.clone());
        }
        normalize_lanes(l.columns_mut().into_iter(), p.columns_mut().into_iter());
        if keep {
            halves.push(p.clone());
        }
    }
    p.mapv_inplace(|x| x.max(SINKHORN_FLOOR));
    Ok((p, halves))
}

/// Doubly stochastic matrix `exp(scores / tau)` balanced by `iters` rounds
/// of alternating row and column normalization, computed in log space.
pub fn sinkhorn(scores: &Matrix, tau: f64, iters: usize) -> Result<Matrix> {
    run(scores, tau, iters, false).map(|(p, _)| p)
}

/// [`sinkhorn`] that also records what [`sinkhorn_backward`] needs.
pub fn sinkhorn_traced(scores: &Matrix, tau: f64, iters: usize) -> Result<(Matrix, SinkhornTrace)> {
    let (p, halves) = run(scores, tau, iters, true)?;
    Ok((p, SinkhornTrace { tau, halves }))
}

/// Gradient with respect to the scores given the gradient with respect to
/// the output of [`sinkhorn_traced`].
pub fn sinkhorn_backward(trace: &SinkhornTrace, grad_out: &Matrix) -> Matrix {
    let last = trace.halves.last().expect("trace has at least one iteration");
    // d/dL of exp(L)
    let mut g = grad_out * last;
    for (k, p) in trace.halves.iter().enumerate().rev() {
        // y = x - lse(x) along an axis: dx = dy - exp(y) * sum(dy)
        if k % 2 == 0 {
            for (mut grow, prow) in g.rows_mut().into_iter().zip(p.rows()) {
                let s = grow.sum();
                Zip::from(&mut grow).and(&prow).for_each(|d, &e| *d -= e * s);
            }
        } else {
            for (mut gcol, pcol) in g.columns_mut().into_iter().zip(p.columns()) {
                let s = gcol.sum();
                Zip::from(&mut gcol).and(&pcol).for_each(|d, &e| *d -= e * s);
            }
        }
    }
    g.mapv_inplace(|x| x / trace.tau);
    g
}
