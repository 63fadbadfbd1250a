use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, Objective};

/// Default number of λ points.
pub const DEFAULT_GRID: usize = 25;

/// `λ·a + (1 − λ)·b`, coordinatewise.
pub fn interpolate(a: &ModelParams, b: &ModelParams, lambda: f64) -> Result<ModelParams> {
    a.check_same_shape(b, "interpolation")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(a.zip_map(b, |x, y| lambda * x + (1.0 - lambda) * y))
}

/// Uniform grid `0, 1/(n−1), …, 1`.
pub fn lambda_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Loss (and accuracy) along the straight line from `b` (λ = 0) to `a` (λ = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub lambdas: Vec<f64>,
    pub losses: Vec<f64>,
    /// Present when the objective reports accuracy.
    pub accuracies: Option<Vec<f64>>,
    /// Largest gap between the path loss and the chord over the grid,
    /// endpoints included.
    pub barrier: f64,
    pub argmax_lambda: f64,
    /// `‖a − b‖`.
    pub beta: f64,
    pub split_name: String,
    pub loss_at_half: f64,
    /// `L((a + b)/2) − (L(a) + L(b))/2`.
    pub barrier_at_half: f64,
    pub accuracy_at_half: Option<f64>,
    /// Largest drop of accuracy below its chord, so positive means worse.
    pub accuracy_barrier: Option<f64>,
    pub accuracy_barrier_at_half: Option<f64>,
}

impl BarrierReport {
    pub fn with_split(mut self, name: &str) -> Self {
        self.split_name = name.to_string();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `lambda,loss,accuracy` rows. Accuracy is empty when unavailable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,loss,accuracy\n");
        for (i, (l, v)) in self.lambdas.iter().zip(&self.losses).enumerate() {
            let acc = self.accuracies.as_ref().map(|a| a[i].to_string()).unwrap_or_default();
            writeln!(out, "{l},{v},{acc}").unwrap();
        }
        out
    }
}

/// Max over `values[i] − chord(λ_i)` where the chord joins the endpoint values.
fn max_gap(lambdas: &[f64], values: &[f64]) -> (f64, f64) {
    let last = values.len() - 1;
    let (v0, v1) = (values[0], values[last]);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (i, (&l, &v)) in lambdas.iter().zip(values).enumerate() {
        let gap = if i == 0 || i == last { 0.0 } else { v - (v0 + l * (v1 - v0)) };
        if gap > best.0 {
            best = (gap, l);
        }
    }
    best
}

/// Loss barrier between `a` and `b` on a uniform grid of `grid_size` λ values.
///
/// The endpoint gaps are zero, so the grid maximum is never negative; a merge
/// that beats both endpoints shows up as a negative `barrier_at_half`. The
/// λ = 1/2 point is evaluated separately when the grid misses it.
pub fn barrier<O: Objective + ?Sized>(
    a: &ModelParams,
    b: &ModelParams,
    objective: &O,
    grid_size: usize,
) -> Result<BarrierReport> {
    a.check_same_shape(b, "barrier")?;
    if grid_size < 3 {
        return Err(Error::invalid(format!("barrier grid needs at least 3 points, got {grid_size}")));
    }
    let lambdas = lambda_grid(grid_size);
    let mut losses = Vec::with_capacity(grid_size);
    let mut accs = Vec::with_capacity(grid_size);
    for &l in &lambdas {
        let m = interpolate(a, b, l)?;
        let (l, acc) = objective.value_and_accuracy(&m)?;
        losses.push(l);
        accs.push(acc);
    }
    let accuracies: Option<Vec<f64>> = accs.into_iter().collect();

    let (barrier, argmax_lambda) = max_gap(&lambdas, &losses);

    let (half_loss, half_acc) = match lambdas.iter().position(|&l| l == 0.5) {
        Some(i) => (losses[i], accuracies.as_ref().map(|a| a[i])),
        None => {
            let m = interpolate(a, b, 0.5)?;
            objective.value_and_accuracy(&m)?
        }
    };
    let (la, lb) = (losses[grid_size - 1], losses[0]);
    let accuracy_barrier = accuracies.as_ref().map(|acc| {
        let neg: Vec<f64> = acc.iter().map(|x| -x).collect();
        max_gap(&lambdas, &neg).0
    });
    let accuracy_barrier_at_half = match (&accuracies, half_acc) {
        (Some(acc), Some(h)) => Some(0.5 * (acc[0] + acc[grid_size - 1]) - h),
        _ => None,
    };
    Ok(BarrierReport {
        beta: a.distance(b),
        barrier,
        argmax_lambda,
        split_name: "eval".into(),
        loss_at_half: half_loss,
        barrier_at_half: half_loss - 0.5 * (la + lb),
        accuracy_at_half: half_acc,
        accuracy_barrier,
        accuracy_barrier_at_half,
        lambdas,
        losses,
        accuracies,
    })
}
