//! Permutation searches that align a model `b` to a reference model `a`.

mod activation;
mod soft;
mod ste;
mod weight;

pub use activation::{activation_matching, activation_matching_with};
pub use ste::ste_matching;
pub use weight::{wm_coordinate, wm_sinkhorn};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{EvalSet, ModelParams};
use crate::permutation::Permutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Weight matching by layer-wise coordinate descent.
    WmCoord,
    /// Weight matching through a Sinkhorn relaxation.
    WmSinkhorn,
    /// Activation matching.
    Am,
    /// Straight-through search on the midpoint loss.
    Ste,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::WmCoord => "wm_coord",
            Method::WmSinkhorn => "wm_sinkhorn",
            Method::Am => "am",
            Method::Ste => "ste",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        [Method::WmCoord, Method::WmSinkhorn, Method::Am, Method::Ste]
            .into_iter()
            .find(|m| m.name() == s)
    }

    pub fn needs_data(self) -> bool {
        matches!(self, Method::Am | Method::Ste)
    }
}

/// Search settings. Counts not used by a method are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub method: Method,
    /// Initial Sinkhorn temperature.
    pub tau: f64,
    /// Temperature multiplier applied after each outer iteration.
    pub tau_decay: f64,
    /// Outer iterations (epochs) of the Sinkhorn searches.
    pub outer_iters: usize,
    /// Gradient steps per outer iteration of `wm_sinkhorn`. The straight-through
    /// search instead takes one step per minibatch of a full pass over the data.
    pub inner_iters: usize,
    /// Row/column normalization rounds per Sinkhorn evaluation.
    pub sinkhorn_iters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fall back to the identity when a relaxed search ends worse than it.
    pub accept_only_improving: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            method: Method::WmCoord,
            tau: 1.0,
            tau_decay: 0.7,
            outer_iters: 10,
            inner_iters: 100,
            sinkhorn_iters: 20,
            learning_rate: 1.0,
            batch_size: 512,
            seed: 0,
            accept_only_improving: true,
        }
    }
}

impl MatchConfig {
    /// Defaults for `method`: ten outer iterations for weight matching and
    /// five epochs for the straight-through search.
    pub fn for_method(method: Method) -> Self {
        MatchConfig {
            method,
            outer_iters: if method == Method::Ste { 5 } else { 10 },
            ..MatchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sinkhorn = matches!(self.method, Method::WmSinkhorn | Method::Ste);
        if sinkhorn {
            if !(self.tau > 0.0 && self.tau.is_finite()) {
                return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
            }
            if !(self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
                return Err(Error::invalid(format!(
                    "tau_decay must lie in (0, 1], got {}",
                    self.tau_decay
                )));
            }
            if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                return Err(Error::invalid(format!(
                    "learning_rate must be positive, got {}",
                    self.learning_rate
                )));
            }
            if self.outer_iters == 0 || self.inner_iters == 0 || self.sinkhorn_iters == 0 || self.batch_size == 0 {
                return Err(Error::invalid("iteration counts and batch_size must be positive"));
            }
        }
        Ok(())
    }

    /// Temperature used during outer iteration `k`.
    pub(crate) fn tau_at(&self, k: usize) -> f64 {
        self.tau * self.tau_decay.powi(k as i32)
    }
}

/// Outcome of a permutation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub method: Method,
    pub config: MatchConfig,
    pub pi: Permutation,
    /// Method-specific objective after each iteration (see each search).
    pub objective_trace: Vec<f64>,
    /// `‖θ_a − θ_b‖` over all weights and biases.
    pub l2_before: f64,
    /// `‖θ_a − π(θ_b)‖` over all weights and biases.
    pub l2_after: f64,
    pub reduction_rate: f64,
    pub l2_includes_bias: bool,
    /// Set when a relaxed search was rejected in favour of the identity.
    pub fell_back_to_identity: bool,
    /// Loss of `(θ_a + π(θ_b)) / 2` on the search data (straight-through only).
    pub midpoint_loss: Option<f64>,
    pub wall_time_secs: f64,
}

impl MatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub(crate) struct Outcome {
    pi: Permutation,
    trace: Vec<f64>,
    fell_back: bool,
    midpoint_loss: Option<f64>,
}

fn reduction(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        (before - after) / before
    } else {
        0.0
    }
}

pub(crate) fn check_pair(a: &ModelParams, b: &ModelParams) -> Result<()> {
    a.check_same_shape(b, "model pair")?;
    if a.activation != b.activation {
        return Err(Error::dim("model pair: activations differ"));
    }
    Ok(())
}

pub(crate) fn finish(
    a: &ModelParams,
    b: &ModelParams,
    config: MatchConfig,
    started: Instant,
    outcome: Outcome,
) -> Result<MatchReport> {
    let l2_before = a.distance(b);
    let l2_after = a.distance(&outcome.pi.apply(b)?);
    Ok(MatchReport {
        method: config.method,
        config,
        pi: outcome.pi,
        objective_trace: outcome.trace,
        l2_before,
        l2_after,
        reduction_rate: reduction(l2_before, l2_after),
        l2_includes_bias: true,
        fell_back_to_identity: outcome.fell_back,
        midpoint_loss: outcome.midpoint_loss,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Runs the search selected by `cfg.method`. `data` is required by the
/// activation and straight-through methods.
pub fn run(a: &ModelParams, b: &ModelParams, data: Option<&EvalSet>, cfg: &MatchConfig) -> Result<MatchReport> {
    let need = |m: Method| {
        data.ok_or_else(|| Error::invalid(format!("method {} needs data", m.name())))
    };
    match cfg.method {
        Method::WmCoord => wm_coordinate(a, b, cfg),
        Method::WmSinkhorn => wm_sinkhorn(a, b, cfg),
        Method::Am => activation_matching_with(a, b, need(Method::Am)?, cfg),
        Method::Ste => ste_matching(a, b, need(Method::Ste)?, cfg),
    }
}
