use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Hidden-layer nonlinearity. The output layer never applies one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// No nonlinearity anywhere: the network is affine in its input.
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// One affine layer, `z ↦ W z + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T = f64> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T> Layer<T> {
    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Parameters of an MLP: `z_ℓ = σ(W_ℓ z_{ℓ-1} + b_ℓ)` with logits at the top.
///
/// Also used for any parameter-shaped quantity (gradients, directions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl ModelParams {
    /// Validates that layer dimensions chain and entries are finite.
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::dim(format!(
                    "layer {}: bias has {} entries for {} outputs",
                    l + 1,
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if l > 0 && layers[l - 1].out_dim() != layer.in_dim() {
                return Err(Error::dim(format!(
                    "layer {}: expects {} inputs but layer {} has {} outputs",
                    l + 1,
                    layer.in_dim(),
                    l,
                    layers[l - 1].out_dim()
                )));
            }
        }
        let model = ModelParams { layers, activation };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    /// All-zero model with the given `[d0, d1, …, dL]` dimensions.
    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Matrix::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        ModelParams { layers, activation }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.dims(), self.activation)
    }

    /// `[d0, d1, …, dL]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths of the hidden layers `d1 … d_{L-1}`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::out_dim).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_shape(&self, other: &ModelParams, what: &str) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::dim(format!(
                "{what}: {} layers vs {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (l, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.weight.dim() != b.weight.dim() {
                return Err(Error::dim(format!(
                    "{what}: layer {} weight {:?} vs {:?}",
                    l + 1,
                    a.weight.dim(),
                    b.weight.dim()
                )));
            }
        }
        Ok(())
    }

    /// Parameters concatenated layer by layer: row-major weight, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the shape template.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ModelParams> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight.dim();
                let weight = Matrix::from_shape_vec((r, c), flat[off..off + r * c].to_vec())
                    .expect("slice length matches");
                off += r * c;
                let bias = Array1::from(flat[off..off + r].to_vec());
                off += r;
                Layer { weight, bias }
            })
            .collect();
        Ok(ModelParams {
            layers,
            activation: self.activation,
        })
    }

    /// Coordinatewise `f(self, other)`; shapes must already agree.
    pub fn zip_map(&self, other: &ModelParams, f: impl Fn(f64, f64) -> f64) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| Layer {
                weight: Zip::from(&a.weight).and(&b.weight).map_collect(|&x, &y| f(x, y)),
                bias: Zip::from(&a.bias).and(&b.bias).map_collect(|&x, &y| f(x, y)),
            })
            .collect();
        ModelParams {
            layers,
            activation: self.activation,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: l.weight.mapv(&f),
                bias: l.bias.mapv(&f),
            })
            .collect();
        ModelParams {
            layers,
            activation: self.activation,
        }
    }

    pub fn add(&self, other: &ModelParams) -> ModelParams {
        self.zip_map(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        self.zip_map(other, |x, y| x - y)
    }

    pub fn scale(&self, k: f64) -> ModelParams {
        self.map(|x| x * k)
    }

    /// Euclidean inner product over all parameters.
    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                a.weight.iter().zip(b.weight.iter()).map(|(x, y)| x * y).sum::<f64>()
                    + a.bias.iter().zip(b.bias.iter()).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Squared norm of the weight matrices only (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// `‖self − other‖` over all parameters.
    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                a.weight.iter().zip(b.weight.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
                    + a.bias.iter().zip(b.bias.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn to_f32_layers(&self) -> Vec<Layer<f32>> {
        self.layers
            .iter()
            .map(|l| Layer {
                weight: l.weight.mapv(|x| x as f32),
                bias: l.bias.mapv(|x| x as f32),
            })
            .collect()
    }

    pub(crate) fn from_f32_layers(layers: &[Layer<f32>], activation: Activation) -> ModelParams {
        ModelParams {
            layers: layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(f64::from),
                    bias: l.bias.mapv(f64::from),
                })
                .collect(),
            activation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> ModelParams {
        ModelParams::new(
            vec![
                Layer {
                    weight: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
                    bias: array![0.1, 0.2, 0.3],
                },
                Layer {
                    weight: array![[1.0, -1.0, 0.5]],
                    bias: array![-0.5],
                },
            ],
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn dims_and_counts() {
        let m = tiny();
        assert_eq!(m.dims(), vec![2, 3, 1]);
        assert_eq!(m.hidden_widths(), vec![3]);
        assert_eq!(m.num_params(), 6 + 3 + 3 + 1);
    }

    #[test]
    fn flatten_round_trip() {
        let m = tiny();
        let flat = m.flatten();
        assert_eq!(&flat[..3], &[1.0, 2.0, 3.0]);
        assert_eq!(m.unflatten(&flat).unwrap(), m);
        assert!(m.unflatten(&flat[1..]).is_err());
    }

    #[test]
    fn rejects_broken_chain() {
        let err = ModelParams::new(
            vec![
                Layer {
                    weight: Matrix::zeros((3, 2)),
                    bias: Array1::zeros(3),
                },
                Layer {
                    weight: Matrix::zeros((1, 4)),
                    bias: Array1::zeros(1),
                },
            ],
            Activation::Relu,
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 2"));
    }

    #[test]
    fn vector_ops() {
        let m = tiny();
        let z = m.sub(&m);
        assert_eq!(z.norm(), 0.0);
        assert!((m.add(&m).norm() - 2.0 * m.norm()).abs() < 1e-12);
        assert!((m.distance(&m.scale(0.0)) - m.norm()).abs() < 1e-12);
    }
}
