use serde::{Deserialize, Serialize};

use super::barrier::lambda_grid;
use crate::error::{Error, Result};
use crate::nn::{ModelParams, Objective};

/// Second-order prediction of the barrier between `a` and `b` from the
/// gradients and curvature at the two endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorEstimate {
    /// Maximum of the prediction over the λ grid.
    pub estimate: f64,
    /// Prediction at λ = 1/2.
    pub estimate_at_half: f64,
    pub lambdas: Vec<f64>,
    /// `(gradient term, hessian term)` for each λ; their sum is the prediction.
    pub per_lambda_terms: Vec<(f64, f64)>,
    /// `‖a − b‖`.
    pub beta: f64,
    /// `βμᵀ(∇L(a) − ∇L(b))`.
    pub gradient_gap: f64,
    /// `μᵀH_aμ`.
    pub curvature_a: f64,
    /// `μᵀH_bμ`.
    pub curvature_b: f64,
    /// `‖μ‖`, 1 up to rounding, 0 when `a = b`.
    pub mu_norm_check: f64,
}

impl TaylorEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `λ(1−λ)[βμᵀ(∇L(a) − ∇L(b)) + ½β²μᵀ((1−λ)H_a + λH_b)μ]` with
/// `μ = (b − a)/β`, for the path `λa + (1−λ)b`.
///
/// Uses two gradients and two Hessian-vector products. Exact, up to rounding,
/// when the objective is quadratic.
pub fn taylor_barrier<O: Objective + ?Sized>(
    a: &ModelParams,
    b: &ModelParams,
    objective: &O,
    grid_size: usize,
) -> Result<TaylorEstimate> {
    a.check_same_shape(b, "taylor barrier")?;
    if grid_size < 3 {
        return Err(Error::invalid(format!("taylor grid needs at least 3 points, got {grid_size}")));
    }
    let lambdas = lambda_grid(grid_size);
    let beta = a.distance(b);
    if beta == 0.0 {
        return Ok(TaylorEstimate {
            estimate: 0.0,
            estimate_at_half: 0.0,
            per_lambda_terms: vec![(0.0, 0.0); grid_size],
            lambdas,
            beta,
            gradient_gap: 0.0,
            curvature_a: 0.0,
            curvature_b: 0.0,
            mu_norm_check: 0.0,
        });
    }
    let mu = b.sub(a).scale(1.0 / beta);
    let (_, ga) = objective.value_and_grad(a)?;
    let (_, gb) = objective.value_and_grad(b)?;
    let gradient_gap = beta * mu.dot(&ga.sub(&gb));
    let curvature_a = mu.dot(&objective.hvp(a, &mu)?);
    let curvature_b = mu.dot(&objective.hvp(b, &mu)?);
    if ![gradient_gap, curvature_a, curvature_b].iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("taylor barrier terms".into()));
    }

    let terms = |l: f64| {
        let w = l * (1.0 - l);
        let hess = 0.5 * beta * beta * ((1.0 - l) * curvature_a + l * curvature_b);
        (w * gradient_gap, w * hess)
    };
    let per_lambda_terms: Vec<(f64, f64)> = lambdas.iter().map(|&l| terms(l)).collect();
    let estimate = per_lambda_terms
        .iter()
        .map(|(g, h)| g + h)
        .fold(f64::NEG_INFINITY, f64::max);
    let (g, h) = terms(0.5);
    Ok(TaylorEstimate {
        estimate,
        estimate_at_half: g + h,
        per_lambda_terms,
        lambdas,
        beta,
        gradient_gap,
        curvature_a,
        curvature_b,
        mu_norm_check: mu.norm(),
    })
}
