//! Circular convolution layers as doubly block-circulant matrices, their
//! block diagonalization by the 2-D DFT, and weight matching in the
//! frequency domain.
//!
//! A layer maps `X ∈ R^{m×n×n}` to `Y_{c,r,i} = Σ_{d,p,q} X_{d,r+p,i+q} K_{p,q,c,d}`
//! with indices taken mod `n`. Tensors are vectorized row-major, so entry
//! `(c, r, i)` sits at `c·n² + r·n + i`.

mod format;

pub use format::{decode_kernel, encode_kernel, load_kernel, save_kernel};

use ndarray::{s, Array2, Array3, Array4, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, svd_complex, Matrix};
use crate::permutation::is_bijection;
use crate::rng::{seeded, stream};

/// Largest `m·n²` for which the dense matrix is built.
pub const DENSE_LIMIT: usize = 4096;

/// Imaginary part tolerated when a sum must be real by conjugate symmetry.
pub const IMAGINARY_TOLERANCE: f64 = 1e-6;

/// Kernel `K[p, q, c, d]`: spatial row, spatial column, output channel, input
/// channel, zero-padded to the input size `n × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    k: Array4<f64>,
}

impl ConvKernel {
    pub fn new(k: Array4<f64>) -> Result<Self> {
        let (n, n2, m, m2) = k.dim();
        if n != n2 || m != m2 || n == 0 || m == 0 {
            return Err(Error::dim(format!("kernel shape {:?} is not n×n×m×m", k.dim())));
        }
        if !k.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("kernel entries".into()));
        }
        Ok(ConvKernel { k })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        ConvKernel {
            k: Array4::zeros((n, n, m, m)),
        }
    }

    /// `K[0, 0, c, c] = 1`: the identity map.
    pub fn delta(n: usize, m: usize) -> Self {
        let mut k = Array4::zeros((n, n, m, m));
        for c in 0..m {
            k[[0, 0, c, c]] = 1.0;
        }
        ConvKernel { k }
    }

    /// Entries uniform in `[-1, 1)`.
    pub fn random(n: usize, m: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, stream::INIT);
        ConvKernel {
            k: Array4::from_shape_simple_fn((n, n, m, m), || rng.random_range(-1.0..1.0)),
        }
    }

    /// A `size × size` kernel placed in the top-left corner of an `n × n` grid.
    pub fn padded(small: &Array4<f64>, n: usize) -> Result<Self> {
        let (h, w, m, m2) = small.dim();
        if h > n || w > n {
            return Err(Error::dim(format!("kernel {h}×{w} larger than input {n}×{n}")));
        }
        let mut k = Array4::zeros((n, n, m, m2));
        k.slice_mut(s![..h, ..w, .., ..]).assign(small);
        ConvKernel::new(k)
    }

    pub fn n(&self) -> usize {
        self.k.dim().0
    }

    pub fn m(&self) -> usize {
        self.k.dim().2
    }

    pub fn tensor(&self) -> &Array4<f64> {
        &self.k
    }

    pub fn norm(&self) -> f64 {
        self.k.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, f: f64) -> ConvKernel {
        ConvKernel { k: &self.k * f }
    }

    pub fn sub(&self, other: &ConvKernel) -> Result<ConvKernel> {
        check_pair(self, other)?;
        Ok(ConvKernel { k: &self.k - &other.k })
    }

    /// Circular convolution of `x` (shape `m × n × n`) by the defining sum.
    pub fn apply(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (n, m) = (self.n(), self.m());
        if x.dim() != (m, n, n) {
            return Err(Error::dim(format!("input {:?}, kernel expects ({m}, {n}, {n})", x.dim())));
        }
        let mut y = Array3::zeros((m, n, n));
        for ((c, r, i), out) in y.indexed_iter_mut() {
            let mut acc = 0.0;
            for d in 0..m {
                for p in 0..n {
                    for q in 0..n {
                        acc += x[[d, (r + p) % n, (i + q) % n]] * self.k[[p, q, c, d]];
                    }
                }
            }
            *out = acc;
        }
        Ok(y)
    }
}

fn check_pair(a: &ConvKernel, b: &ConvKernel) -> Result<()> {
    if a.k.dim() != b.k.dim() {
        return Err(Error::dim(format!("kernels {:?} vs {:?}", a.k.dim(), b.k.dim())));
    }
    Ok(())
}

fn check_perm(p: &[usize], m: usize, what: &str) -> Result<()> {
    if p.len() != m || !is_bijection(p) {
        return Err(Error::invalid(format!("{what} is not a permutation of {m} channels")));
    }
    Ok(())
}

/// Dense `mn² × mn²` matrix of a convolution, an `m × m` grid of
/// doubly circulant `n² × n²` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMatrix {
    pub dense: Matrix,
    pub n: usize,
    pub m: usize,
}

impl ConvMatrix {
    /// Block `B_{c,d}` mapping input channel `d` to output channel `c`.
    pub fn block(&self, c: usize, d: usize) -> ArrayView2<'_, f64> {
        let b = self.n * self.n;
        self.dense.slice(s![c * b..(c + 1) * b, d * b..(d + 1) * b])
    }

    /// True when every block is constant along wrapped diagonals at both the
    /// outer and inner level.
    pub fn is_doubly_circulant(&self) -> bool {
        let n = self.n;
        let at = |r: usize, i: usize| r * n + i;
        (0..self.m).all(|c| {
            (0..self.m).all(|d| {
                let b = self.block(c, d);
                (0..n).all(|r| {
                    (0..n).all(|i| {
                        (0..n).all(|r2| {
                            (0..n).all(|i2| {
                                b[[at(r, i), at(r2, i2)]] == b[[at(0, 0), at((r2 + n - r) % n, (i2 + n - i) % n)]]
                            })
                        })
                    })
                })
            })
        })
    }
}

/// `M[(c,r,i), (d,r',i')] = K[(r'−r) mod n, (i'−i) mod n, c, d]`.
pub fn build_conv_matrix(kernel: &ConvKernel) -> Result<ConvMatrix> {
    let (n, m) = (kernel.n(), kernel.m());
    let size = m * n * n;
    if size > DENSE_LIMIT {
        return Err(Error::invalid(format!(
            "dense conv matrix needs m·n² ≤ {DENSE_LIMIT}, got {size}"
        )));
    }
    let idx = |c: usize, r: usize, i: usize| (c * n + r) * n + i;
    let mut dense = Matrix::zeros((size, size));
    for c in 0..m {
        for d in 0..m {
            for r in 0..n {
                for i in 0..n {
                    for r2 in 0..n {
                        for i2 in 0..n {
                            dense[[idx(c, r, i), idx(d, r2, i2)]] =
                                kernel.k[[(r2 + n - r) % n, (i2 + n - i) % n, c, d]];
                        }
                    }
                }
            }
        }
    }
    Ok(ConvMatrix { dense, n, m })
}

/// `G[c, d, w]`: the `w`-th diagonal entry of `Q B_{c,d} Q*`, with
/// `w = s·n + t` the frequency pair `(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBlocks {
    pub g: Array3<Complex64>,
    pub n: usize,
    pub m: usize,
}

impl SpectralBlocks {
    pub fn frequencies(&self) -> usize {
        self.n * self.n
    }

    /// The `m × m` matrix `G[:, :, w]`.
    pub fn at(&self, w: usize) -> Array2<Complex64> {
        self.g.slice(s![.., .., w]).to_owned()
    }
}

/// `G[c, d, (s,t)] = Σ_{p,q} K[p, q, c, d] · exp(+2πi(sp + tq)/n)`, by a
/// direct 2-D DFT of every channel slice.
pub fn spectral_blocks(kernel: &ConvKernel) -> SpectralBlocks {
    let (n, m) = (kernel.n(), kernel.m());
    let roots: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .collect();
    let mut g = Array3::zeros((m, m, n * n));
    for c in 0..m {
        for d in 0..m {
            for s_ in 0..n {
                for t in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for p in 0..n {
                        for q in 0..n {
                            acc += roots[(s_ * p + t * q) % n] * kernel.k[[p, q, c, d]];
                        }
                    }
                    g[[c, d, s_ * n + t]] = acc;
                }
            }
        }
    }
    SpectralBlocks { g, n, m }
}

/// Singular values of the convolution, descending: the union over
/// frequencies of the singular values of `G[:, :, w]`.
pub fn conv_singular_values(kernel: &ConvKernel) -> Result<Vec<f64>> {
    let blocks = spectral_blocks(kernel);
    let mut out = Vec::with_capacity(blocks.m * blocks.frequencies());
    for w in 0..blocks.frequencies() {
        out.extend(svd_complex(&blocks.at(w))?.s);
    }
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

/// Singular values of the dense matrix, for cross-checking at small sizes.
pub fn dense_singular_values(kernel: &ConvKernel) -> Result<Vec<f64>> {
    Ok(svd(&build_conv_matrix(kernel)?.dense)?.s)
}

/// Relabels channels: `K'[:, :, c, d] = K[:, :, p_out[c], p_in[d]]`, so the
/// dense matrix becomes `(P_out ⊗ I) M (P_in ⊗ I)ᵀ`.
pub fn kernel_permute(kernel: &ConvKernel, p_out: &[usize], p_in: &[usize]) -> Result<ConvKernel> {
    let m = kernel.m();
    check_perm(p_out, m, "output permutation")?;
    check_perm(p_in, m, "input permutation")?;
    let k = Array4::from_shape_fn(kernel.k.dim(), |(p, q, c, d)| kernel.k[[p, q, p_out[c], p_in[d]]]);
    Ok(ConvKernel { k })
}

/// `Re Σ_w Σ_{i,j} s_{w,i}^a s_{w,j}^b conj(u_iᴴ P_out u_j) (v_iᴴ P_in v_j)`,
/// from per-frequency SVDs. Equals `⟨M_a, (P_out ⊗ I) M_b (P_in ⊗ I)ᵀ⟩`.
///
/// The imaginary parts cancel across conjugate frequencies; a residue above
/// [`IMAGINARY_TOLERANCE`] (relative to the real part when that exceeds 1) is
/// an error.
pub fn conv_alignment_objective(ka: &ConvKernel, kb: &ConvKernel, p_out: &[usize], p_in: &[usize]) -> Result<f64> {
    check_pair(ka, kb)?;
    let m = ka.m();
    check_perm(p_out, m, "output permutation")?;
    check_perm(p_in, m, "input permutation")?;
    let (ga, gb) = (spectral_blocks(ka), spectral_blocks(kb));
    let mut total = Complex64::new(0.0, 0.0);
    for w in 0..ga.frequencies() {
        let da = svd_complex(&ga.at(w))?;
        let db = svd_complex(&gb.at(w))?;
        // rows of b's factors moved by the channel permutations
        let ub = db.u.select(ndarray::Axis(0), p_out);
        let vb = db.v.select(ndarray::Axis(0), p_in);
        for (i, &si) in da.s.iter().enumerate() {
            for (j, &sj) in db.s.iter().enumerate() {
                let uu: Complex64 = (0..m).map(|k| da.u[[k, i]].conj() * ub[[k, j]]).sum();
                let vv: Complex64 = (0..m).map(|k| da.v[[k, i]].conj() * vb[[k, j]]).sum();
                total += uu.conj() * vv * (si * sj);
            }
        }
    }
    if total.im.abs() > IMAGINARY_TOLERANCE * total.re.abs().max(1.0) {
        return Err(Error::ImaginaryResidue(total.im));
    }
    Ok(total.re)
}

#[cfg(test)]
mod tests;
