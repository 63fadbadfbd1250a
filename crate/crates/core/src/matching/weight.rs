use std::time::Instant;

use super::soft::{soft_apply, soft_grads, Scores};
use super::{check_pair, finish, MatchConfig, MatchReport, Method, Outcome};
use crate::error::{Error, Result};
use crate::linalg::{linear_sum_assignment, Matrix};
use crate::nn::ModelParams;
use crate::permutation::Permutation;
use crate::rng::{seeded, shuffle, stream};

/// Gain matrix for hidden layer `k + 1` with the other layers held fixed:
/// `C[i, j]` is the inner product gained by sending unit `j` of `b` to slot `i`.
fn layer_gain(a: &ModelParams, b: &ModelParams, perms: &[Vec<usize>], k: usize) -> Matrix {
    let hidden = perms.len();
    let (wa, wb) = (&a.layers[k].weight, &b.layers[k].weight);
    let wb_cols = if k > 0 {
        let prev = &perms[k - 1];
        Matrix::from_shape_fn(wb.dim(), |(i, j)| wb[[i, prev[j]]])
    } else {
        wb.clone()
    };
    let mut c = wa.dot(&wb_cols.t());
    let (ba, bb) = (&a.layers[k].bias, &b.layers[k].bias);
    for (i, &x) in ba.iter().enumerate() {
        c.row_mut(i).scaled_add(x, bb);
    }
    let (na, nb) = (&a.layers[k + 1].weight, &b.layers[k + 1].weight);
    let nb_rows = if k + 1 < hidden {
        let next = &perms[k + 1];
        Matrix::from_shape_fn(nb.dim(), |(i, j)| nb[[next[i], j]])
    } else {
        nb.clone()
    };
    c += &na.t().dot(&nb_rows);
    c
}

/// Forward sweep that matches each layer on its incoming weights and bias
/// alone, given the assignment already chosen for the layer below.
fn forward_sweep(a: &ModelParams, b: &ModelParams, hidden: usize) -> Result<Permutation> {
    let mut per_layer: Vec<Vec<usize>> = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let (wa, wb) = (&a.layers[k].weight, &b.layers[k].weight);
        let wb_cols = match per_layer.last() {
            Some(prev) => Matrix::from_shape_fn(wb.dim(), |(i, j)| wb[[i, prev[j]]]),
            None => wb.clone(),
        };
        let mut c = wa.dot(&wb_cols.t());
        let bb = &b.layers[k].bias;
        for (i, &x) in a.layers[k].bias.iter().enumerate() {
            c.row_mut(i).scaled_add(x, bb);
        }
        per_layer.push(linear_sum_assignment(&c, true)?.perm);
    }
    Permutation::new(per_layer)
}

fn sq_distance(a: &ModelParams, b: &ModelParams, pi: &Permutation) -> Result<f64> {
    Ok(a.distance(&pi.apply(b)?).powi(2))
}

/// Weight matching by coordinate descent over layers.
///
/// Each pass visits the hidden layers in a seeded random order and replaces a
/// layer's permutation by the optimal assignment given its neighbours, but
/// only on strict improvement. Stops after a pass that changes nothing.
///
/// The search starts from the identity, or from a forward sweep that matches
/// each layer on its incoming weights when that is strictly closer. The trace
/// holds `‖θ_a − π(θ_b)‖²` at the identity, at the starting point, and after
/// every pass.
pub fn wm_coordinate(a: &ModelParams, b: &ModelParams, cfg: &MatchConfig) -> Result<MatchReport> {
    let started = Instant::now();
    check_pair(a, b)?;
    let config = MatchConfig {
        method: Method::WmCoord,
        ..cfg.clone()
    };
    let mut pi = Permutation::identity_for(a);
    let hidden = pi.per_layer.len();
    let mut rng = seeded(cfg.seed, stream::LAYER_ORDER);
    let mut trace = vec![sq_distance(a, b, &pi)?];
    let swept = forward_sweep(a, b, hidden)?;
    let swept_value = sq_distance(a, b, &swept)?;
    if swept_value < trace[0] {
        pi = swept;
        trace.push(swept_value);
    } else {
        trace.push(trace[0]);
    }
    let mut order: Vec<usize> = (0..hidden).collect();
    loop {
        shuffle(&mut order, &mut rng);
        let mut changed = false;
        for &k in &order {
            let c = layer_gain(a, b, &pi.per_layer, k);
            let current: f64 = pi.per_layer[k].iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
            let best = linear_sum_assignment(&c, true)?;
            if best.cost - current > 1e-12 * current.abs().max(1.0) {
                pi.per_layer[k] = best.perm;
                changed = true;
            }
        }
        trace.push(sq_distance(a, b, &pi)?);
        if !changed {
            break;
        }
    }
    finish(
        a,
        b,
        config,
        started,
        Outcome {
            pi,
            trace,
            fell_back: false,
            midpoint_loss: None,
        },
    )
}

/// Weight matching through Sinkhorn-relaxed permutations.
///
/// Scores start at the identity and are trained with Adam on
/// `‖θ_a − P(θ_b)‖²`, where `P` mixes units softly, for
/// `outer_iters × inner_iters` steps with the temperature annealed after each
/// outer iteration. The trace holds the mean relaxed objective per outer
/// iteration.
pub fn wm_sinkhorn(a: &ModelParams, b: &ModelParams, cfg: &MatchConfig) -> Result<MatchReport> {
    let started = Instant::now();
    check_pair(a, b)?;
    let config = MatchConfig {
        method: Method::WmSinkhorn,
        ..cfg.clone()
    };
    config.validate()?;
    let mut scores = Scores::identity(&a.hidden_widths());
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut step = 0;
    for outer in 0..cfg.outer_iters {
        let tau = config.tau_at(outer);
        let mut total = 0.0;
        for _ in 0..cfg.inner_iters {
            let relaxed = scores.relax(tau, cfg.sinkhorn_iters)?;
            let applied = soft_apply(b, &relaxed.mats);
            let diff = applied.model.sub(a);
            let value = diff.dot(&diff);
            if !value.is_finite() {
                return Err(Error::SearchDiverged {
                    iteration: step,
                    value,
                });
            }
            total += value;
            let grads = soft_grads(b, &relaxed.mats, &applied, &diff.scale(2.0));
            scores.step(&relaxed, &grads, cfg.learning_rate);
            if !scores.is_finite() {
                return Err(Error::SearchDiverged {
                    iteration: step,
                    value: f64::NAN,
                });
            }
            step += 1;
        }
        trace.push(total / cfg.inner_iters as f64);
    }
    let last_tau = config.tau_at(cfg.outer_iters.saturating_sub(1));
    let mut pi = scores.harden(last_tau, cfg.sinkhorn_iters)?;
    let mut fell_back = false;
    if cfg.accept_only_improving && sq_distance(a, b, &pi)? > a.distance(b).powi(2) {
        pi = Permutation::identity_for(a);
        fell_back = true;
    }
    finish(
        a,
        b,
        config,
        started,
        Outcome {
            pi,
            trace,
            fell_back,
            midpoint_loss: None,
        },
    )
}
