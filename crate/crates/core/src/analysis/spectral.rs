use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, svd, Matrix, SvdResult};
use crate::nn::{forward, EvalSet, ModelParams};
use crate::permutation::Permutation;

const CHUNK: usize = 2048;

/// Singular-vector alignment `R_γ` between `a` and `π(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub gamma: f64,
    pub r_value: f64,
    pub per_layer_numerators: Vec<f64>,
    pub denominator: f64,
    /// Per layer, how many singular values of `a` and of `b` pass the threshold.
    pub counts: Vec<(usize, usize)>,
    /// Largest singular value over all layers of `a` and of `b`.
    pub s_max: (f64, f64),
}

/// Economy SVD of every weight matrix, input layer first.
pub fn layer_svds(model: &ModelParams) -> Result<Vec<SvdResult>> {
    model.layers.iter().map(|l| svd(&l.weight)).collect()
}

/// Descending singular values of every weight matrix.
pub fn spectrum(model: &ModelParams) -> Result<Vec<Vec<f64>>> {
    Ok(layer_svds(model)?.into_iter().map(|d| d.s).collect())
}

/// Fraction of singular values with `s_{ℓ,i} / s_{ℓ,1} ≥ gamma`, pooled over
/// layers. Each layer is compared with its own largest value.
pub fn large_singular_ratio(model: &ModelParams, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    let (mut large, mut total) = (0usize, 0usize);
    for s in spectrum(model)? {
        total += s.len();
        if let Some(&top) = s.first() {
            if top > 0.0 {
                large += s.iter().filter(|&&x| x / top >= gamma).count();
            }
        }
    }
    Ok(large as f64 / total as f64)
}

fn s_max(svds: &[SvdResult]) -> f64 {
    svds.iter().flat_map(|d| d.s.first().copied()).fold(0.0, f64::max)
}

/// Per-layer Gram matrices `(Uᵀ_a U_b, Vᵀ_a V_b)`.
fn grams(sa: &[SvdResult], sb: &[SvdResult]) -> Vec<(Matrix, Matrix)> {
    sa.iter()
        .zip(sb)
        .map(|(x, y)| (x.u.t().dot(&y.u), x.v.t().dot(&y.v)))
        .collect()
}

/// `R_γ(a, π(b))` for several thresholds, sharing one set of SVDs.
///
/// Thresholds are relative to each model's largest singular value over all
/// layers. Layer `ℓ` contributes `Σ_{i,j} (u_iᵀu_j)(v_iᵀv_j)` over the pairs
/// where both singular values pass, and `min(n_a, n_b)` to the denominator.
/// With γ = 0 every singular value counts.
pub fn compute_r_many(a: &ModelParams, b: &ModelParams, pi: &Permutation, gammas: &[f64]) -> Result<Vec<AlignmentReport>> {
    a.check_same_shape(b, "alignment")?;
    for &g in gammas {
        if !(0.0..1.0).contains(&g) {
            return Err(Error::invalid(format!("gamma {g} outside [0, 1)")));
        }
    }
    let moved = pi.apply(b)?;
    let (sa, sb) = (layer_svds(a)?, layer_svds(&moved)?);
    let (ma, mb) = (s_max(&sa), s_max(&sb));
    let grams = grams(&sa, &sb);
    Ok(gammas
        .iter()
        .map(|&gamma| {
            let mut per_layer_numerators = Vec::with_capacity(grams.len());
            let mut counts = Vec::with_capacity(grams.len());
            let mut denominator = 0.0;
            for ((x, y), (gu, gv)) in sa.iter().zip(&sb).zip(&grams) {
                let na = x.s.iter().take_while(|&&v| v >= gamma * ma).count();
                let nb = y.s.iter().take_while(|&&v| v >= gamma * mb).count();
                let num = (gu.slice(s![..na, ..nb]).to_owned() * gv.slice(s![..na, ..nb])).sum();
                per_layer_numerators.push(num);
                counts.push((na, nb));
                denominator += na.min(nb) as f64;
            }
            let total: f64 = per_layer_numerators.iter().sum();
            AlignmentReport {
                gamma,
                r_value: if denominator > 0.0 { total / denominator } else { 0.0 },
                per_layer_numerators,
                denominator,
                counts,
                s_max: (ma, mb),
            }
        })
        .collect())
}

/// `R_γ(a, π(b))`.
pub fn compute_r(a: &ModelParams, b: &ModelParams, pi: &Permutation, gamma: f64) -> Result<AlignmentReport> {
    Ok(compute_r_many(a, b, pi, &[gamma])?.remove(0))
}

/// `Σ_ℓ Σ_{i,j} s_i^a s_j^b (u_iᵀ P_ℓ u_j)(v_iᵀ P_{ℓ−1} v_j)`, the weight
/// inner product `Σ_ℓ ⟨W_a, P_ℓ W_b P_{ℓ−1}ᵀ⟩` written in singular vectors.
/// Biases are left out.
pub fn alignment_objective(a: &ModelParams, b: &ModelParams, pi: &Permutation) -> Result<f64> {
    a.check_same_shape(b, "alignment objective")?;
    let moved = pi.apply(b)?;
    let (sa, sb) = (layer_svds(a)?, layer_svds(&moved)?);
    let mut total = 0.0;
    for ((x, y), (gu, gv)) in sa.iter().zip(&sb).zip(grams(&sa, &sb)) {
        for (i, &si) in x.s.iter().enumerate() {
            for (j, &sj) in y.s.iter().enumerate() {
                total += si * sj * gu[[i, j]] * gv[[i, j]];
            }
        }
    }
    Ok(total)
}

/// For every layer `ℓ` and right singular vector `v_{ℓ,i}` of `W_ℓ`, the mean
/// of `(v_{ℓ,i}ᵀ z_{ℓ−1})²` over `data`, where `z_{ℓ−1}` is the layer's input.
pub fn input_alignment(model: &ModelParams, data: &EvalSet) -> Result<Vec<Vec<f64>>> {
    if data.is_empty() {
        return Err(Error::EmptyData("input alignment needs data".into()));
    }
    let svds = layer_svds(model)?;
    let mut acc: Vec<Vec<f64>> = svds.iter().map(|d| vec![0.0; d.s.len()]).collect();
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let trace = forward(model, &data.inputs.slice(s![start..end, ..]).to_owned())?;
        for (l, (d, out)) in svds.iter().zip(acc.iter_mut()).enumerate() {
            let proj = trace.layer(l).dot(&d.v);
            for (o, col) in out.iter_mut().zip(proj.axis_iter(Axis(1))) {
                *o += col.iter().map(|x| x * x).sum::<f64>();
            }
        }
    }
    let n = data.len() as f64;
    Ok(acc.into_iter().map(|v| v.into_iter().map(|x| x / n).collect()).collect())
}

/// Both sides of the output-difference bound for one ReLU layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDiffReport {
    /// Sample mean of `‖relu(W_a z) − relu(W_b z)‖`.
    pub lhs: f64,
    /// `c · sqrt(term_a + term_b − 2·cross_term)`.
    pub rhs: f64,
    pub lipschitz_c: f64,
    /// `Σ_i (s_i^a)² E(v_iᵀz)²`.
    pub term_a: f64,
    /// `Σ_i (s_i^b)² E(v_iᵀz)²`.
    pub term_b: f64,
    /// `Σ_{i,j} s_i^a s_j^b (u_iᵀu_j) E[(v_iᵀz)(v_jᵀz)]`.
    pub cross_term: f64,
    /// `‖W_a − W_b‖_F`.
    pub weight_distance: f64,
}

/// Output difference of two ReLU layers on `samples` (one row per `z`)
/// against its singular-vector bound with Lipschitz constant `c`.
/// Expectations on both sides are means over the same samples.
pub fn output_diff_bound(wa: &Matrix, wb: &Matrix, samples: &Matrix, c: f64) -> Result<OutputDiffReport> {
    if wa.dim() != wb.dim() {
        return Err(Error::dim(format!("weights {:?} vs {:?}", wa.dim(), wb.dim())));
    }
    if samples.ncols() != wa.ncols() {
        return Err(Error::dim(format!(
            "samples have {} features, weights expect {}",
            samples.ncols(),
            wa.ncols()
        )));
    }
    if samples.nrows() == 0 {
        return Err(Error::EmptyData("output bound needs samples".into()));
    }
    if !(c > 0.0) {
        return Err(Error::invalid(format!("lipschitz constant must be positive, got {c}")));
    }
    let n = samples.nrows() as f64;
    let relu = |m: Matrix| m.mapv(|x| x.max(0.0));
    let diff = relu(samples.dot(&wa.t())) - relu(samples.dot(&wb.t()));
    let lhs = diff.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).sum::<f64>() / n;

    let (da, db) = (svd(wa)?, svd(wb)?);
    let (pa, pb) = (samples.dot(&da.v), samples.dot(&db.v));
    let energy = |d: &SvdResult, p: &Matrix| -> f64 {
        d.s.iter()
            .zip(p.axis_iter(Axis(1)))
            .map(|(s, col)| s * s * col.dot(&col) / n)
            .sum()
    };
    let (term_a, term_b) = (energy(&da, &pa), energy(&db, &pb));
    let gu = da.u.t().dot(&db.u);
    let m = pa.t().dot(&pb) / n;
    let mut cross_term = 0.0;
    for (i, si) in da.s.iter().enumerate() {
        for (j, sj) in db.s.iter().enumerate() {
            cross_term += si * sj * gu[[i, j]] * m[[i, j]];
        }
    }
    let inner = (term_a + term_b - 2.0 * cross_term).max(0.0);
    Ok(OutputDiffReport {
        lhs,
        rhs: c * inner.sqrt(),
        lipschitz_c: c,
        term_a,
        term_b,
        cross_term,
        weight_distance: frobenius(&(wa - wb)),
    })
}
