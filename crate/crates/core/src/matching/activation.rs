use std::time::Instant;

use ndarray::s;

use super::{check_pair, finish, MatchConfig, MatchReport, Method, Outcome};
use crate::error::{Error, Result};
use crate::linalg::{linear_sum_assignment, Matrix};
use crate::nn::{forward, EvalSet, ModelParams};
use crate::permutation::Permutation;

const CHUNK: usize = 2048;

/// `E[z_a zᵀ_b]` for every hidden layer, as means over `data`.
pub(crate) fn cross_correlations(a: &ModelParams, b: &ModelParams, data: &EvalSet) -> Result<Vec<Matrix>> {
    if data.is_empty() {
        return Err(Error::EmptyData("activation matching needs data".into()));
    }
    let widths = a.hidden_widths();
    let mut acc: Vec<Matrix> = widths.iter().map(|&w| Matrix::zeros((w, w))).collect();
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let x = data.inputs.slice(s![start..end, ..]).to_owned();
        let ta = forward(a, &x)?;
        let tb = forward(b, &x)?;
        for (l, c) in acc.iter_mut().enumerate() {
            *c += &ta.layer(l + 1).t().dot(tb.layer(l + 1));
        }
    }
    let n = data.len() as f64;
    Ok(acc.into_iter().map(|c| c / n).collect())
}

/// Activation matching with default settings.
pub fn activation_matching(a: &ModelParams, b: &ModelParams, data: &EvalSet) -> Result<MatchReport> {
    activation_matching_with(a, b, data, &MatchConfig::for_method(Method::Am))
}

/// Per layer, the assignment maximizing `Σ_i E[z_a[i] · z_b[p[i]]]`, which
/// minimizes `E‖z_a − P z_b‖²`. Layers are solved independently. The trace
/// holds the total matched correlation.
pub fn activation_matching_with(
    a: &ModelParams,
    b: &ModelParams,
    data: &EvalSet,
    cfg: &MatchConfig,
) -> Result<MatchReport> {
    let started = Instant::now();
    check_pair(a, b)?;
    let config = MatchConfig {
        method: Method::Am,
        ..cfg.clone()
    };
    let mut per_layer = Vec::new();
    let mut total = 0.0;
    for c in cross_correlations(a, b, data)? {
        let best = linear_sum_assignment(&c, true)?;
        total += best.cost;
        per_layer.push(best.perm);
    }
    finish(
        a,
        b,
        config,
        started,
        Outcome {
            pi: Permutation::new(per_layer)?,
            trace: vec![total],
            fell_back: false,
            midpoint_loss: None,
        },
    )
}
