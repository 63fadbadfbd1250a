//! Permutations of hidden units and their action on MLP parameters.
//!
//! A layer permutation `p` acts on a vector as `(P x)_i = x[p[i]]`. Applying a
//! [`Permutation`] to a model reorders the rows of `W_ℓ`, `b_ℓ` by `P_ℓ` and
//! the columns of `W_ℓ` by `P_{ℓ-1}`. Input and output units are never moved.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Layer, ModelParams};
use crate::rng::{seeded, shuffle, stream};

/// One index vector per hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    pub per_layer: Vec<Vec<usize>>,
}

pub(crate) fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &j in p {
        if j >= p.len() || seen[j] {
            return false;
        }
        seen[j] = true;
    }
    true
}

fn permute_rows(m: &Matrix, p: &[usize]) -> Matrix {
    Matrix::from_shape_fn(m.dim(), |(i, j)| m[[p[i], j]])
}

fn permute_cols(m: &Matrix, p: &[usize]) -> Matrix {
    Matrix::from_shape_fn(m.dim(), |(i, j)| m[[i, p[j]]])
}

impl Permutation {
    /// Checks that every layer entry is a bijection.
    pub fn new(per_layer: Vec<Vec<usize>>) -> Result<Self> {
        for (l, p) in per_layer.iter().enumerate() {
            if !is_bijection(p) {
                return Err(Error::invalid(format!("hidden layer {}: not a permutation", l + 1)));
            }
        }
        Ok(Permutation { per_layer })
    }

    pub fn identity(widths: &[usize]) -> Self {
        Permutation {
            per_layer: widths.iter().map(|&w| (0..w).collect()).collect(),
        }
    }

    /// Identity over the hidden layers of `model`.
    pub fn identity_for(model: &ModelParams) -> Self {
        Permutation::identity(&model.hidden_widths())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.per_layer.iter().map(Vec::len).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.per_layer
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }

    pub fn invert(&self) -> Permutation {
        let per_layer = self
            .per_layer
            .iter()
            .map(|p| {
                let mut inv = vec![0; p.len()];
                for (i, &j) in p.iter().enumerate() {
                    inv[j] = i;
                }
                inv
            })
            .collect();
        Permutation { per_layer }
    }

    /// `self ∘ other`: applying the result equals applying `other`, then `self`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.widths() != other.widths() {
            return Err(Error::dim(format!(
                "cannot compose permutations of widths {:?} and {:?}",
                self.widths(),
                other.widths()
            )));
        }
        let per_layer = self
            .per_layer
            .iter()
            .zip(&other.per_layer)
            .map(|(p, q)| p.iter().map(|&i| q[i]).collect())
            .collect();
        Ok(Permutation { per_layer })
    }

    /// Index vector for layer `l` in `0..=L`, with identity at both ends.
    pub fn layer(&self, l: usize, width: usize) -> Vec<usize> {
        if l == 0 || l > self.per_layer.len() {
            (0..width).collect()
        } else {
            self.per_layer[l - 1].clone()
        }
    }

    /// Dense matrix of hidden layer `l` (1-based), with `P[i, p[i]] = 1`.
    pub fn matrix(&self, l: usize) -> Matrix {
        let p = &self.per_layer[l - 1];
        let mut m = Matrix::zeros((p.len(), p.len()));
        for (i, &j) in p.iter().enumerate() {
            m[[i, j]] = 1.0;
        }
        m
    }

    /// Returns `π(θ)`, which computes the same function as `θ`.
    pub fn apply(&self, model: &ModelParams) -> Result<ModelParams> {
        let widths = model.hidden_widths();
        if self.per_layer.len() != widths.len() {
            return Err(Error::dim(format!(
                "permutation covers {} hidden layers, model has {}",
                self.per_layer.len(),
                widths.len()
            )));
        }
        for (l, (p, &w)) in self.per_layer.iter().zip(&widths).enumerate() {
            if p.len() != w {
                return Err(Error::dim(format!(
                    "hidden layer {}: permutation of {} units, model has {w}",
                    l + 1,
                    p.len()
                )));
            }
        }
        let depth = model.depth();
        let layers = model
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let mut weight = layer.weight.clone();
                let mut bias = layer.bias.clone();
                if l + 1 < depth {
                    let p = &self.per_layer[l];
                    weight = permute_rows(&weight, p);
                    bias = Array1::from_shape_fn(bias.len(), |i| layer.bias[p[i]]);
                }
                if l > 0 {
                    weight = permute_cols(&weight, &self.per_layer[l - 1]);
                }
                Layer { weight, bias }
            })
            .collect();
        Ok(ModelParams {
            layers,
            activation: model.activation,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index vectors always serialize")
    }

    pub fn from_json(text: &str) -> Result<Permutation> {
        let raw: Permutation = serde_json::from_str(text)?;
        Permutation::new(raw.per_layer)
    }
}

pub fn apply(pi: &Permutation, model: &ModelParams) -> Result<ModelParams> {
    pi.apply(model)
}

pub fn invert(pi: &Permutation) -> Permutation {
    pi.invert()
}

pub fn compose(p: &Permutation, q: &Permutation) -> Result<Permutation> {
    p.compose(q)
}

/// Uniformly random permutation of each hidden layer, drawn by Fisher–Yates.
pub fn random_permutation(widths: &[usize], seed: u64) -> Permutation {
    let mut rng = seeded(seed, stream::PERMUTATION);
    let per_layer = widths
        .iter()
        .map(|&w| {
            let mut p: Vec<usize> = (0..w).collect();
            shuffle(&mut p, &mut rng);
            p
        })
        .collect();
    Permutation { per_layer }
}
