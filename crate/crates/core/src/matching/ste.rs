use std::time::Instant;

use ndarray::Axis;

use super::soft::{soft_apply, soft_grads, Scores};
use super::{check_pair, finish, MatchConfig, MatchReport, Method, Outcome};
use crate::error::{Error, Result};
use crate::nn::{batch_loss_and_grad, loss, EvalSet, ModelParams};
use crate::permutation::Permutation;
use crate::rng::{seeded, shuffle, stream};

fn midpoint(a: &ModelParams, b: &ModelParams) -> ModelParams {
    a.zip_map(b, |x, y| 0.5 * (x + y))
}

/// Permutation search on the loss of the midpoint `(θ_a + π(θ_b)) / 2`.
///
/// The permutation is relaxed by Sinkhorn and the midpoint loss is minimized
/// with Adam over `outer_iters` passes through `data` in seeded minibatches,
/// with gradients flowing back through the Sinkhorn iterations. The trace
/// holds the mean minibatch midpoint loss per pass. The final midpoint loss
/// is evaluated on all of `data`.
pub fn ste_matching(a: &ModelParams, b: &ModelParams, data: &EvalSet, cfg: &MatchConfig) -> Result<MatchReport> {
    let started = Instant::now();
    check_pair(a, b)?;
    let config = MatchConfig {
        method: Method::Ste,
        ..cfg.clone()
    };
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("straight-through search needs data".into()));
    }
    let identity_loss = loss(&midpoint(a, b), data)?;

    let mut scores = Scores::identity(&a.hidden_widths());
    let mut rng = seeded(cfg.seed, stream::MINIBATCH);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut step = 0;
    for epoch in 0..cfg.outer_iters {
        let tau = config.tau_at(epoch);
        shuffle(&mut order, &mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let x = data.inputs.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let relaxed = scores.relax(tau, cfg.sinkhorn_iters)?;
            let applied = soft_apply(b, &relaxed.mats);
            let mid = midpoint(a, &applied.model);
            let (value, grad) = batch_loss_and_grad(&mid, x.view(), &y, data.loss_kind);
            if !value.is_finite() {
                return Err(Error::SearchDiverged { iteration: step, value });
            }
            total += value;
            batches += 1;
            let grads = soft_grads(b, &relaxed.mats, &applied, &grad.scale(0.5));
            scores.step(&relaxed, &grads, cfg.learning_rate);
            if !scores.is_finite() {
                return Err(Error::SearchDiverged {
                    iteration: step,
                    value: f64::NAN,
                });
            }
            step += 1;
        }
        trace.push(total / batches as f64);
    }

    let last_tau = config.tau_at(cfg.outer_iters.saturating_sub(1));
    let mut pi = scores.harden(last_tau, cfg.sinkhorn_iters)?;
    let mut mid_loss = loss(&midpoint(a, &pi.apply(b)?), data)?;
    let mut fell_back = false;
    if cfg.accept_only_improving && mid_loss > identity_loss {
        pi = Permutation::identity_for(a);
        mid_loss = identity_loss;
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
            midpoint_loss: Some(mid_loss),
        },
    )
}
