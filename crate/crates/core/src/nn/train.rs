use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::engine;
use super::model::{Activation, Layer, ModelParams};
use super::EvalSet;
use crate::error::{Error, Result};
use crate::rng::{seeded, shuffle, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// Optimizer and architecture settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// L2 penalty coefficient added to the gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seed for the data order; initialization has its own seed.
    pub seed: u64,
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 512,
            epochs: 100,
            seed: 0,
            hidden: vec![512, 512, 512],
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Uniform `(−1/√fan_in, 1/√fan_in)` initialization of weights and biases.
///
/// Values are rounded to single precision, the precision training runs in.
pub fn init_model(dims: &[usize], activation: Activation, seed: u64) -> Result<ModelParams> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::invalid(format!("invalid layer dimensions {dims:?}")));
    }
    let mut rng = seeded(seed, stream::INIT);
    let mut draw = |bound: f64| rng.random_range(-bound..bound) as f32 as f64;
    let layers = dims
        .windows(2)
        .map(|w| {
            let bound = (1.0 / w[0] as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((w[1], w[0]), || draw(bound));
            let bias = Array1::from_shape_simple_fn(w[1], || draw(bound));
            Layer { weight, bias }
        })
        .collect();
    ModelParams::new(layers, activation)
}

struct Adam {
    m: Vec<Layer<f32>>,
    v: Vec<Layer<f32>>,
    t: i32,
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

fn zeros_like(layers: &[Layer<f32>]) -> Vec<Layer<f32>> {
    layers
        .iter()
        .map(|l| Layer {
            weight: Array2::zeros(l.weight.raw_dim()),
            bias: Array1::zeros(l.bias.raw_dim()),
        })
        .collect()
}

impl Adam {
    fn new(layers: &[Layer<f32>]) -> Self {
        Adam {
            m: zeros_like(layers),
            v: zeros_like(layers),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Layer<f32>], grads: &[Layer<f32>], lr: f32, wd: f32) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let update = |p: &mut f32, &g: &f32, m: &mut f32, v: &mut f32| {
            let g = g + wd * *p;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

fn sgd_step(params: &mut [Layer<f32>], grads: &[Layer<f32>], lr: f32, wd: f32) {
    let update = |p: &mut f32, &g: &f32| *p -= lr * (g + wd * *p);
    for (p, g) in params.iter_mut().zip(grads) {
        Zip::from(&mut p.weight).and(&g.weight).for_each(update);
        Zip::from(&mut p.bias).and(&g.bias).for_each(update);
    }
}

/// Trains an MLP from a seeded initialization. See [`train_with_progress`].
pub fn train(config: &TrainConfig, train_set: &EvalSet, init_seed: u64) -> Result<ModelParams> {
    train_with_progress(config, train_set, init_seed, |_, _| {})
}

/// Minibatch training in single precision.
///
/// The output size is the number of classes present in the labels. The data
/// is reshuffled every epoch from the stream keyed by `(config.seed, epoch)`.
/// `progress` receives the epoch index and its mean training loss.
pub fn train_with_progress(
    config: &TrainConfig,
    train_set: &EvalSet,
    init_seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<ModelParams> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyData("training set has no examples".into()));
    }
    let mut dims = vec![train_set.input_dim()];
    dims.extend(&config.hidden);
    dims.push(train_set.num_classes());
    let init = init_model(&dims, config.activation, init_seed)?;
    let mut params = init.to_f32_layers();

    let x = train_set.inputs.mapv(|v| v as f32);
    let n = train_set.len();
    let lr = config.learning_rate as f32;
    let wd = config.weight_decay as f32;
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let mut rng = seeded(config.seed, stream::SHUFFLE_BASE + epoch as u64);
        order.sort_unstable();
        shuffle(&mut order, &mut rng);
        let mut total = 0.0f64;
        for idx in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let scale = 1.0 / idx.len() as f32;
            let (loss, grads) =
                engine::loss_and_grad(&params, config.activation, xb.view(), &yb, train_set.loss_kind, scale);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: loss as f64,
                });
            }
            total += loss as f64;
            match config.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grads, lr, wd),
                Optimizer::Sgd => sgd_step(&mut params, &grads, lr, wd),
            }
        }
        let mean = total / n as f64;
        let finite = params
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if !mean.is_finite() || !finite {
            return Err(Error::TrainingDiverged { epoch, loss: mean });
        }
        progress(epoch, mean);
    }
    Ok(ModelParams::from_f32_layers(&params, config.activation))
}
