//! One-sided (Hestenes) Jacobi SVD for real and complex dense matrices.
//!
//! Columns of the working matrix are orthogonalized pairwise by plane
//! rotations; the accumulated rotations form `V` and the normalized columns
//! form `U`. Accurate to near machine precision at the sizes used here.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Sweep cap before reporting non-convergence.
pub const MAX_SWEEPS: usize = 100;
/// Convergence threshold on the normalized off-diagonal mass of `AᵀA`.
pub const SVD_TOLERANCE: f64 = 1e-12;
/// Magnitude below which an entry is treated as zero by the sign convention.
const SIGN_EPS: f64 = 1e-12;

/// Economy SVD `a = u · diag(s) · vᵀ` with `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u · diag(s) · vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (mut col, &s) in us.columns_mut().into_iter().zip(&self.s) {
            col *= s;
        }
        us.dot(&self.v.t())
    }
}

/// Economy SVD of a complex matrix, `a = u · diag(s) · vᴴ`.
#[derive(Debug, Clone)]
pub struct ComplexSvd {
    pub u: Array2<Complex64>,
    pub s: Vec<f64>,
    pub v: Array2<Complex64>,
}

trait Field: Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<Output = Self> {
    fn zero() -> Self;
    fn one() -> Self;
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
    fn scale(self, k: f64) -> Self;
    /// Unit-modulus scalar with the phase of `self`.
    fn phase(self) -> Self;
}

impl Field for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn conj(self) -> Self {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn phase(self) -> Self {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

impl Field for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn phase(self) -> Self {
        let r = self.norm();
        if r == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            self / r
        }
    }
}

struct Raw<T> {
    u: Vec<Vec<T>>,
    s: Vec<f64>,
    v: Vec<Vec<T>>,
}

fn dot<T: Field>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x.conj() * y)
}

fn norm2<T: Field>(a: &[T]) -> f64 {
    a.iter().map(|x| x.abs2()).sum()
}

/// Jacobi on the columns of a tall matrix (`rows >= cols`), given column-wise.
fn jacobi_tall<T: Field>(mut cols: Vec<Vec<T>>, rows: usize, shape: (usize, usize)) -> Result<Raw<T>> {
    let n = cols.len();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            e
        })
        .collect();

    let mut converged = n < 2;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norm2(&cols[p]);
                let beta = norm2(&cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                let g = gamma.abs2().sqrt();
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = g / (alpha * beta).sqrt();
                off += rel * rel;
                if rel <= f64::EPSILON {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Rotate a_q by the conjugate phase of gamma so the pair's inner
                // product becomes real and positive.
                let ph = gamma.phase().conj();
                for i in 0..rows {
                    let xp = cols[p][i];
                    let xq = cols[q][i] * ph;
                    cols[p][i] = xp.scale(c) - xq.scale(s);
                    cols[q][i] = xp.scale(s) + xq.scale(c);
                }
                for i in 0..n {
                    let xp = v[p][i];
                    let xq = v[q][i] * ph;
                    v[p][i] = xp.scale(c) - xq.scale(s);
                    v[q][i] = xp.scale(s) + xq.scale(c);
                }
            }
        }
        if off.sqrt() < SVD_TOLERANCE {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            rows: shape.0,
            cols: shape.1,
            sweeps: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| norm2(c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let scale_ref = norms.iter().cloned().fold(0.0, f64::max);
    let cutoff = scale_ref * (rows.max(n) as f64) * f64::EPSILON;
    let mut u_out: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut s_out = Vec::with_capacity(n);
    let mut v_out = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for &j in &order {
        let sj = norms[j];
        if sj > cutoff && sj > 0.0 {
            u_out.push(cols[j].iter().map(|&x| x.scale(1.0 / sj)).collect());
            s_out.push(sj);
        } else {
            pending.push(u_out.len());
            u_out.push(Vec::new());
            s_out.push(if sj > cutoff { sj } else { 0.0 });
        }
        v_out.push(v[j].clone());
    }
    complete_basis(&mut u_out, &pending, rows);

    // Sign convention: first non-negligible entry of each left vector is real and non-negative.
    for (u, v) in u_out.iter_mut().zip(v_out.iter_mut()) {
        if let Some(&lead) = u.iter().find(|x| x.abs2().sqrt() > SIGN_EPS) {
            let ph = lead.phase().conj();
            for x in u.iter_mut() {
                *x = *x * ph;
            }
            for x in v.iter_mut() {
                *x = *x * ph;
            }
        }
    }
    Ok(Raw {
        u: u_out,
        s: s_out,
        v: v_out,
    })
}

/// Fills the listed empty columns with unit vectors orthogonal to the rest.
fn complete_basis<T: Field>(u: &mut [Vec<T>], pending: &[usize], rows: usize) {
    let mut candidate = 0;
    for &slot in pending {
        loop {
            assert!(candidate < rows, "basis completion ran out of candidates");
            let mut e = vec![T::zero(); rows];
            e[candidate] = T::one();
            candidate += 1;
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for (k, col) in u.iter().enumerate() {
                    if col.is_empty() || k == slot {
                        continue;
                    }
                    let proj = dot(col, &e);
                    for i in 0..rows {
                        e[i] = e[i] - col[i] * proj;
                    }
                }
            }
            let nrm = norm2(&e).sqrt();
            if nrm > 1e-6 {
                u[slot] = e.into_iter().map(|x| x.scale(1.0 / nrm)).collect();
                break;
            }
        }
    }
}

fn to_columns<T: Field>(a: &Array2<T>, conj_transpose: bool) -> Vec<Vec<T>> {
    if conj_transpose {
        a.rows().into_iter().map(|r| r.iter().map(|x| x.conj()).collect()).collect()
    } else {
        a.columns().into_iter().map(|c| c.to_vec()).collect()
    }
}

fn from_columns<T: Field>(cols: &[Vec<T>], rows: usize) -> Array2<T> {
    Array2::from_shape_fn((rows, cols.len()), |(i, j)| cols[j][i])
}

fn svd_generic<T: Field>(a: &Array2<T>) -> Result<(Array2<T>, Vec<f64>, Array2<T>)> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::dim(format!("svd requires a non-empty matrix, got {m}x{n}")));
    }
    if m >= n {
        let raw = jacobi_tall(to_columns(a, false), m, (m, n))?;
        Ok((from_columns(&raw.u, m), raw.s, from_columns(&raw.v, n)))
    } else {
        // a = u s vᴴ  <=>  aᴴ = v s uᴴ
        let raw = jacobi_tall(to_columns(a, true), n, (m, n))?;
        let mut u = raw.v;
        let mut v = raw.u;
        for (uc, vc) in u.iter_mut().zip(v.iter_mut()) {
            if let Some(&lead) = uc.iter().find(|x| x.abs2().sqrt() > SIGN_EPS) {
                let ph = lead.phase().conj();
                for x in uc.iter_mut() {
                    *x = *x * ph;
                }
                for x in vc.iter_mut() {
                    *x = *x * ph;
                }
            }
        }
        Ok((from_columns(&u, m), raw.s, from_columns(&v, n)))
    }
}

/// Economy SVD with descending singular values.
///
/// Deterministic for a fixed input. The first entry of each left singular
/// vector whose magnitude exceeds 1e-12 is made non-negative and the right
/// vector is flipped with it.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!("svd input {}x{}", a.nrows(), a.ncols())));
    }
    let (u, s, v) = svd_generic(a)?;
    Ok(SvdResult { u, s, v })
}

/// Economy SVD of a complex matrix. The leading non-negligible entry of each
/// left singular vector is made real and non-negative.
pub fn svd_complex(a: &Array2<Complex64>) -> Result<ComplexSvd> {
    if !a.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::NonFinite(format!("svd input {}x{}", a.nrows(), a.ncols())));
    }
    let (u, s, v) = svd_generic(a)?;
    Ok(ComplexSvd { u, s, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;
    use rand::Rng;

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.t().dot(q);
        let k = g.nrows();
        let mut e: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((g[[i, j]] - target).abs());
            }
        }
        e
    }

    #[test]
    fn identity_two_by_two() {
        let r = svd(&Matrix::eye(2)).unwrap();
        assert_eq!(r.s, vec![1.0, 1.0]);
        assert_eq!(r.u, Matrix::eye(2));
        assert_eq!(r.v, Matrix::eye(2));
    }

    #[test]
    fn diagonal_values_sorted() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let r = svd(&a).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_five_by_three_reconstructs() {
        let mut rng = seeded(7, 0);
        let a = Matrix::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let r = svd(&a).unwrap();
        let err = crate::linalg::frobenius(&(r.reconstruct() - &a)) / crate::linalg::frobenius(&a);
        assert!(err < 1e-8, "relative error {err}");
        assert!(orthonormality_error(&r.u) < 1e-8);
        assert!(orthonormality_error(&r.v) < 1e-8);
        assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_and_rank_deficient() {
        // rank one 3x5
        let x = array![[1.0], [2.0], [-1.0]];
        let y = array![[0.5, -1.0, 2.0, 0.0, 1.0]];
        let a = x.dot(&y);
        let r = svd(&a).unwrap();
        assert_eq!(r.rank(), 3);
        assert!(r.s[1] < 1e-12 && r.s[2] < 1e-12);
        assert!(orthonormality_error(&r.u) < 1e-10);
        assert!(orthonormality_error(&r.v) < 1e-10);
        assert!(crate::linalg::frobenius(&(r.reconstruct() - &a)) < 1e-12);
    }

    #[test]
    fn zero_matrix_has_orthonormal_factors() {
        let r = svd(&Matrix::zeros((3, 2))).unwrap();
        assert_eq!(r.s, vec![0.0, 0.0]);
        assert!(orthonormality_error(&r.u) < 1e-12);
    }

    #[test]
    fn sign_convention_makes_leading_entry_nonnegative() {
        let a = array![[-2.0, 0.0], [0.0, -1.0]];
        let r = svd(&a).unwrap();
        for col in r.u.columns() {
            let lead = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*lead >= 0.0);
        }
        assert!(crate::linalg::frobenius(&(r.reconstruct() - &a)) < 1e-14);
    }

    #[test]
    fn rejects_nan_and_empty() {
        let a = array![[1.0, f64::NAN]];
        assert!(svd(&a).is_err());
        assert!(svd(&Matrix::zeros((0, 3))).is_err());
    }

    #[test]
    fn complex_svd_reconstructs() {
        let mut rng = seeded(11, 0);
        let a = Array2::from_shape_fn((4, 3), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        for m in [a.clone(), a.t().to_owned()] {
            let r = svd_complex(&m).unwrap();
            let mut us = r.u.clone();
            for (mut c, &s) in us.columns_mut().into_iter().zip(&r.s) {
                c.mapv_inplace(|x| x * s);
            }
            let vh = r.v.t().mapv(|x| x.conj());
            let rec = us.dot(&vh);
            let err: f64 = (&rec - &m).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-10, "err {err}");
            let g = r.u.t().mapv(|x| x.conj()).dot(&r.u);
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let t = if i == j { 1.0 } else { 0.0 };
                    assert!((g[[i, j]] - Complex64::new(t, 0.0)).norm() < 1e-10);
                }
            }
        }
    }
}
