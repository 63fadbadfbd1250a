//! Multilayer perceptrons: evaluation, gradients, Hessian-vector products,
//! training and checkpoints.

pub(crate) mod checkpoint;
mod engine;
mod model;
mod objective;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Manifest};
pub use model::{Activation, Layer, ModelParams};
pub use objective::{Objective, QuadraticObjective};
pub use train::{init_model, train, train_with_progress, Optimizer, TrainConfig};

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Rows per chunk when evaluating large sets, to bound memory.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    /// Squared error against one-hot targets, summed over outputs.
    Mse,
}

/// Labelled examples over which a loss is evaluated.
#[derive(Debug, Clone)]
pub struct EvalSet {
    /// `N × d_in`, one example per row.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub loss_kind: LossKind,
}

impl EvalSet {
    pub fn new(inputs: Matrix, labels: Vec<usize>, loss_kind: LossKind) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::dim(format!(
                "{} inputs but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("evaluation inputs".into()));
        }
        Ok(EvalSet {
            inputs,
            labels,
            loss_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// The first `n` examples (or all of them if there are fewer).
    pub fn take(&self, n: usize) -> EvalSet {
        let n = n.min(self.len());
        EvalSet {
            inputs: self.inputs.slice(s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            loss_kind: self.loss_kind,
        }
    }

    pub fn with_loss(mut self, kind: LossKind) -> EvalSet {
        self.loss_kind = kind;
        self
    }

    fn check(&self, model: &ModelParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyData("evaluation set has no examples".into()));
        }
        check_model(model)?;
        check_input(model, self.input_dim())?;
        let out = model.output_dim();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= out) {
            return Err(Error::dim(format!("label {bad} out of range for {out} outputs")));
        }
        Ok(())
    }

    fn chunks(&self) -> impl Iterator<Item = (ndarray::ArrayView2<'_, f64>, &[usize])> {
        (0..self.len()).step_by(CHUNK).map(move |start| {
            let end = (start + CHUNK).min(self.len());
            (self.inputs.slice(s![start..end, ..]), &self.labels[start..end])
        })
    }
}

/// Outputs of every layer for a batch: `z_0 = x`, hidden `z_ℓ`, and logits last.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<Matrix>,
}

impl ActivationTrace {
    pub fn input(&self) -> &Matrix {
        &self.layers[0]
    }

    pub fn logits(&self) -> &Matrix {
        self.layers.last().expect("trace is never empty")
    }

    /// `z_ℓ` for `ℓ` in `0..=L`.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].nrows()
    }
}

fn check_model(model: &ModelParams) -> Result<()> {
    for (l, pair) in model.layers.windows(2).enumerate() {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(Error::dim(format!(
                "layer {}: expects {} inputs but layer {} has {} outputs",
                l + 2,
                pair[1].in_dim(),
                l + 1,
                pair[0].out_dim()
            )));
        }
    }
    for (l, layer) in model.layers.iter().enumerate() {
        if layer.bias.len() != layer.out_dim() {
            return Err(Error::dim(format!("layer {}: bias length mismatch", l + 1)));
        }
    }
    Ok(())
}

fn check_input(model: &ModelParams, d: usize) -> Result<()> {
    if model.input_dim() != d {
        return Err(Error::dim(format!(
            "layer 1: expects {} inputs, batch has {d}",
            model.input_dim()
        )));
    }
    Ok(())
}

/// Runs the network on a batch (`N × d_in`) and keeps every layer's output.
pub fn forward(model: &ModelParams, batch: &Matrix) -> Result<ActivationTrace> {
    check_model(model)?;
    check_input(model, batch.ncols())?;
    Ok(ActivationTrace {
        layers: engine::forward(&model.layers, model.activation, batch.view()),
    })
}

/// Logits for a batch.
pub fn predict(model: &ModelParams, batch: &Matrix) -> Result<Matrix> {
    let mut trace = forward(model, batch)?;
    Ok(trace.layers.pop().expect("trace is never empty"))
}

fn diverged(what: &str, loss: f64) -> Error {
    Error::NonFinite(format!("{what}: loss is {loss}"))
}

/// Mean loss over the set.
pub fn loss(model: &ModelParams, eval: &EvalSet) -> Result<f64> {
    Ok(loss_and_accuracy(model, eval)?.0)
}

/// Mean loss and fraction of correctly classified examples.
pub fn loss_and_accuracy(model: &ModelParams, eval: &EvalSet) -> Result<(f64, f64)> {
    eval.check(model)?;
    let mut total = 0.0;
    let mut correct = 0;
    for (x, y) in eval.chunks() {
        let (t, c) = engine::loss_sum(&model.layers, model.activation, x, y, eval.loss_kind);
        total += t;
        correct += c;
    }
    let n = eval.len() as f64;
    let mean = total / n;
    if mean.is_nan() {
        return Err(diverged("loss evaluation", mean));
    }
    Ok((mean, correct as f64 / n))
}

/// Fraction of examples whose largest logit is the label.
pub fn accuracy(model: &ModelParams, eval: &EvalSet) -> Result<f64> {
    Ok(loss_and_accuracy(model, eval)?.1)
}

fn accumulate(acc: &mut [Layer], part: Vec<Layer>) {
    for (a, p) in acc.iter_mut().zip(part) {
        a.weight += &p.weight;
        a.bias += &p.bias;
    }
}

/// Mean loss and its gradient with respect to every parameter.
pub fn loss_and_grad(model: &ModelParams, eval: &EvalSet) -> Result<(f64, ModelParams)> {
    eval.check(model)?;
    let scale = 1.0 / eval.len() as f64;
    let mut grad = model.zeros_like();
    let mut total = 0.0;
    for (x, y) in eval.chunks() {
        let (t, g) = engine::loss_and_grad(&model.layers, model.activation, x, y, eval.loss_kind, scale);
        total += t;
        accumulate(&mut grad.layers, g);
    }
    let mean = total * scale;
    if mean.is_nan() || !grad.is_finite() {
        return Err(diverged("gradient evaluation", mean));
    }
    Ok((mean, grad))
}

/// Hessian of the mean loss at `model` applied to `v`, without forming the Hessian.
pub fn hvp(model: &ModelParams, eval: &EvalSet, v: &ModelParams) -> Result<ModelParams> {
    eval.check(model)?;
    model.check_same_shape(v, "hvp direction")?;
    let scale = 1.0 / eval.len() as f64;
    let mut out = model.zeros_like();
    for (x, y) in eval.chunks() {
        let part = engine::hvp(&model.layers, model.activation, x, y, eval.loss_kind, scale, &v.layers);
        accumulate(&mut out.layers, part);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("hessian-vector product".into()));
    }
    Ok(out)
}

/// Mean loss and gradient on one minibatch given as a view, without the
/// chunking and divergence checks of [`loss_and_grad`].
pub(crate) fn batch_loss_and_grad(
    model: &ModelParams,
    x: ndarray::ArrayView2<f64>,
    labels: &[usize],
    kind: LossKind,
) -> (f64, ModelParams) {
    let scale = 1.0 / labels.len() as f64;
    let (total, layers) = engine::loss_and_grad(&model.layers, model.activation, x, labels, kind, scale);
    (
        total * scale,
        ModelParams {
            layers,
            activation: model.activation,
        },
    )
}
