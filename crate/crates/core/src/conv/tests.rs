use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;

use super::*;
use crate::permutation::random_permutation;

fn perm_matrix(p: &[usize]) -> Matrix {
    let mut out = Matrix::zeros((p.len(), p.len()));
    for (i, &j) in p.iter().enumerate() {
        out[[i, j]] = 1.0;
    }
    out
}

fn kron<T: Copy + std::ops::Mul<Output = T> + num_traits::Zero>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| a[[i / rb, j / cb]] * b[[i % rb, j % cb]])
}

/// `Q = (F ⊗ F)/n` with `F_{jk} = exp(−2πi·jk/n)`.
fn fourier(n: usize) -> Array2<Complex64> {
    let f = Array2::from_shape_fn((n, n), |(j, k)| {
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64)
    });
    kron(&f, &f).mapv(|z| z / n as f64)
}

fn complex(a: &ArrayView2<f64>) -> Array2<Complex64> {
    a.mapv(|x| Complex64::new(x, 0.0))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn random_input(m: usize, n: usize, seed: u64) -> Array3<f64> {
    let mut rng = seeded(seed, stream::DATA);
    Array3::from_shape_simple_fn((m, n, n), || rng.random_range(-1.0..1.0))
}

#[test]
fn delta_kernel_gives_identity() {
    let k = ConvKernel::delta(2, 1);
    assert_eq!(build_conv_matrix(&k).unwrap().dense, Matrix::eye(4));
    let k = ConvKernel::delta(3, 2);
    assert_eq!(build_conv_matrix(&k).unwrap().dense, Matrix::eye(18));
}

#[test]
fn matrix_reproduces_circular_convolution() {
    let (n, m) = (4, 2);
    let k = ConvKernel::random(n, m, 3);
    let mat = build_conv_matrix(&k).unwrap();
    for seed in 0..5 {
        let x = random_input(m, n, seed);
        let y = mat.dense.dot(&Array1::from_iter(x.iter().copied()));
        // direct sum written out independently of the library's loop
        let t = k.tensor();
        for c in 0..m {
            for r in 0..n {
                for i in 0..n {
                    let mut want = 0.0;
                    for d in 0..m {
                        for p in 0..n {
                            for q in 0..n {
                                want += x[[d, (r + p) % n, (i + q) % n]] * t[[p, q, c, d]];
                            }
                        }
                    }
                    assert!((y[(c * n + r) * n + i] - want).abs() < 1e-10);
                }
            }
        }
        let direct = k.apply(&x).unwrap();
        for (a, b) in direct.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert!(k.apply(&random_input(m, n + 1, 0)).is_err());
}

use ndarray::Array1;

#[test]
fn blocks_are_doubly_circulant() {
    let k = ConvKernel::random(3, 2, 4);
    let mut mat = build_conv_matrix(&k).unwrap();
    assert!(mat.is_doubly_circulant());
    mat.dense[[1, 0]] += 1.0;
    assert!(!mat.is_doubly_circulant());
}

#[test]
fn dense_size_guard() {
    assert!(build_conv_matrix(&ConvKernel::zeros(16, 16)).is_ok());
    assert!(matches!(build_conv_matrix(&ConvKernel::zeros(17, 15)), Err(Error::InvalidArgument(_))));
}

#[test]
fn norm_lemma() {
    for seed in 0..5 {
        let n = 2 + seed as usize % 4;
        let (ka, kb) = (ConvKernel::random(n, 2, seed), ConvKernel::random(n, 2, 50 + seed));
        let (ma, mb) = (build_conv_matrix(&ka).unwrap(), build_conv_matrix(&kb).unwrap());
        let dense = (&ma.dense - &mb.dense).iter().map(|x| x * x).sum::<f64>();
        let kernel = ka.sub(&kb).unwrap().norm().powi(2);
        assert!((dense - (n * n) as f64 * kernel).abs() < 1e-10 * dense);
    }
}

#[test]
fn delta_kernel_spectrum() {
    let g = spectral_blocks(&ConvKernel::delta(3, 2));
    for ((c, d, _), z) in g.g.indexed_iter() {
        let want = if c == d { 1.0 } else { 0.0 };
        assert!((z - Complex64::new(want, 0.0)).norm() < 1e-14);
    }
    let s = conv_singular_values(&ConvKernel::delta(3, 2)).unwrap();
    assert_eq!(s.len(), 18);
    assert!(s.iter().all(|x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn fourier_transform_diagonalizes_each_block() {
    for (n, m) in [(2, 2), (3, 2), (4, 3)] {
        let k = ConvKernel::random(n, m, n as u64);
        let mat = build_conv_matrix(&k).unwrap();
        let g = spectral_blocks(&k);
        let q = fourier(n);
        let qh = q.t().mapv(|z| z.conj());
        for c in 0..m {
            for d in 0..m {
                let dmat = q.dot(&complex(&mat.block(c, d))).dot(&qh);
                for ((i, j), z) in dmat.indexed_iter() {
                    if i == j {
                        assert!((z - g.g[[c, d, i]]).norm() < 1e-9);
                    } else {
                        assert!(z.norm() < 1e-9, "off-diagonal {z}");
                    }
                }
            }
        }
    }
}

#[test]
fn single_channel_spectrum_is_dft_magnitude() {
    let k = ConvKernel::random(5, 1, 9);
    let mut mags: Vec<f64> = spectral_blocks(&k).g.iter().map(|z| z.norm()).collect();
    mags = sorted(mags);
    let dense = svd(&build_conv_matrix(&k).unwrap().dense).unwrap().s;
    for (a, b) in mags.iter().zip(&dense) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn spectral_singular_values_match_dense() {
    for n in 2..=8 {
        for m in 1..=4 {
            let k = ConvKernel::random(n, m, (10 * n + m) as u64);
            let fast = conv_singular_values(&k).unwrap();
            let dense = dense_singular_values(&k).unwrap();
            assert_eq!(fast.len(), dense.len());
            for (a, b) in fast.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-6, "n={n} m={m}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn singular_values_are_homogeneous() {
    let k = ConvKernel::random(4, 3, 2);
    let s = conv_singular_values(&k).unwrap();
    let s2 = conv_singular_values(&k.scale(2.0)).unwrap();
    for (a, b) in s.iter().zip(&s2) {
        assert!((2.0 * a - b).abs() < 1e-10);
    }
}

#[test]
fn permuting_channels_permutes_the_matrix() {
    let (n, m) = (3, 4);
    let k = ConvKernel::random(n, m, 7);
    let id: Vec<usize> = (0..m).collect();
    assert_eq!(kernel_permute(&k, &id, &id).unwrap(), k);
    let swap = vec![1, 0, 3, 2];
    let twice = kernel_permute(&kernel_permute(&k, &swap, &swap).unwrap(), &swap, &swap).unwrap();
    assert_eq!(twice, k);

    let p_out = random_permutation(&[m], 1).per_layer[0].clone();
    let p_in = random_permutation(&[m], 2).per_layer[0].clone();
    let moved = build_conv_matrix(&kernel_permute(&k, &p_out, &p_in).unwrap()).unwrap().dense;
    let eye = Matrix::eye(n * n);
    let expected = kron(&perm_matrix(&p_out), &eye)
        .dot(&build_conv_matrix(&k).unwrap().dense)
        .dot(&kron(&perm_matrix(&p_in), &eye).t());
    assert_eq!(moved, expected);

    let g = spectral_blocks(&k);
    let gp = spectral_blocks(&kernel_permute(&k, &p_out, &p_in).unwrap());
    let (po, pi) = (perm_matrix(&p_out).mapv(|x| Complex64::new(x, 0.0)), perm_matrix(&p_in).mapv(|x| Complex64::new(x, 0.0)));
    for w in 0..n * n {
        let want = po.dot(&g.at(w)).dot(&pi.t());
        for (a, b) in gp.at(w).iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
    assert!(kernel_permute(&k, &[0, 0, 1, 2], &id).is_err());
    assert!(kernel_permute(&k, &[0, 1], &id).is_err());
}

#[test]
fn alignment_objective_of_a_kernel_with_itself() {
    let k = ConvKernel::random(4, 3, 3);
    let id = [0, 1, 2];
    let want: f64 = conv_singular_values(&k).unwrap().iter().map(|s| s * s).sum();
    let got = conv_alignment_objective(&k, &k, &id, &id).unwrap();
    assert!((got - want).abs() < 1e-10 * want);
}

#[test]
fn alignment_objective_matches_dense_identity() {
    let (n, m) = (4, 3);
    for seed in 0..10 {
        let ka = ConvKernel::random(n, m, seed);
        let kb = ConvKernel::random(n, m, 100 + seed);
        let p_out = random_permutation(&[m], seed).per_layer[0].clone();
        let p_in = random_permutation(&[m], 50 + seed).per_layer[0].clone();
        let ma = build_conv_matrix(&ka).unwrap().dense;
        let mb = build_conv_matrix(&kb).unwrap().dense;
        let eye = Matrix::eye(n * n);
        let moved = kron(&perm_matrix(&p_out), &eye).dot(&mb).dot(&kron(&perm_matrix(&p_in), &eye).t());
        let sq = |x: &Matrix| x.iter().map(|v| v * v).sum::<f64>();
        let lhs = sq(&(&ma - &moved));
        let obj = conv_alignment_objective(&ka, &kb, &p_out, &p_in).unwrap();
        let rhs = sq(&ma) + sq(&mb) - 2.0 * obj;
        assert!((lhs - rhs).abs() < 1e-8 * lhs, "{lhs} vs {rhs}");
    }
}

#[test]
fn alignment_objective_finds_planted_channel_permutation() {
    fn perms(m: usize) -> Vec<Vec<usize>> {
        if m == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(m - 1) {
            for pos in 0..m {
                let mut q = p.clone();
                q.insert(pos, m - 1);
                out.push(q);
            }
        }
        out
    }
    let inverse = |p: &[usize]| {
        let mut inv = vec![0; p.len()];
        for (i, &j) in p.iter().enumerate() {
            inv[j] = i;
        }
        inv
    };
    for m in [3, 4] {
        let ka = ConvKernel::random(3, m, m as u64);
        let rho_out = random_permutation(&[m], 11).per_layer[0].clone();
        let rho_in = random_permutation(&[m], 12).per_layer[0].clone();
        // b is a relabelled copy of a that the pair (rho_out, rho_in) undoes
        let kb = kernel_permute(&ka, &inverse(&rho_out), &inverse(&rho_in)).unwrap();
        let mut best = (f64::NEG_INFINITY, vec![], vec![]);
        for po in perms(m) {
            for pi in perms(m) {
                let v = conv_alignment_objective(&ka, &kb, &po, &pi).unwrap();
                if v > best.0 + 1e-9 {
                    best = (v, po.clone(), pi);
                }
            }
        }
        assert_eq!((best.1, best.2), (rho_out, rho_in));
    }
}

#[test]
fn mismatched_kernels_are_rejected() {
    let (a, b) = (ConvKernel::random(3, 2, 1), ConvKernel::random(3, 3, 1));
    assert!(matches!(conv_alignment_objective(&a, &b, &[0, 1], &[0, 1]), Err(Error::Dimension(_))));
    assert!(ConvKernel::new(ndarray::Array4::zeros((3, 2, 2, 2))).is_err());
    let small = ndarray::Array4::from_elem((2, 2, 1, 1), 1.0);
    let k = ConvKernel::padded(&small, 4).unwrap();
    assert_eq!(k.tensor().sum(), 4.0);
    assert_eq!(k.tensor()[[3, 3, 0, 0]], 0.0);
    assert!(ConvKernel::padded(&small, 1).is_err());
}
