//! Sinkhorn-relaxed permutations shared by the weight-matching and
//! straight-through searches.

use ndarray::Zip;

use crate::error::Result;
use crate::linalg::{hard_project, sinkhorn_backward, sinkhorn_traced, Matrix, SinkhornTrace};
use crate::nn::{Layer, ModelParams};
use crate::permutation::Permutation;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Score matrices for every hidden layer, optimized with Adam.
pub(crate) struct Scores {
    pub scores: Vec<Matrix>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

/// Soft permutation matrices and what is needed to differentiate them.
pub(crate) struct Relaxed {
    pub mats: Vec<Matrix>,
    traces: Vec<SinkhornTrace>,
}

impl Scores {
    /// Scores that favour the identity.
    pub fn identity(widths: &[usize]) -> Self {
        let zeros = || widths.iter().map(|&w| Matrix::zeros((w, w))).collect::<Vec<_>>();
        Scores {
            scores: widths.iter().map(|&w| Matrix::eye(w)).collect(),
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn relax(&self, tau: f64, iters: usize) -> Result<Relaxed> {
        let mut mats = Vec::with_capacity(self.scores.len());
        let mut traces = Vec::with_capacity(self.scores.len());
        for s in &self.scores {
            let (p, trace) = sinkhorn_traced(s, tau, iters)?;
            mats.push(p);
            traces.push(trace);
        }
        Ok(Relaxed { mats, traces })
    }

    /// One Adam step given gradients with respect to the relaxed matrices.
    pub fn step(&mut self, relaxed: &Relaxed, grad_p: &[Matrix], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (k, gp) in grad_p.iter().enumerate() {
            let g = sinkhorn_backward(&relaxed.traces[k], gp);
            Zip::from(&mut self.scores[k])
                .and(&g)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .for_each(|x, &g, m, v| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *x -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                });
        }
    }

    pub fn is_finite(&self) -> bool {
        self.scores.iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Rounds each relaxed matrix to the nearest permutation.
    pub fn harden(&self, tau: f64, iters: usize) -> Result<Permutation> {
        let relaxed = self.relax(tau, iters)?;
        let per_layer = relaxed
            .mats
            .iter()
            .map(|p| hard_project(p).map(|a| a.perm))
            .collect::<Result<Vec<_>>>()?;
        Permutation::new(per_layer)
    }
}

/// `b` with every hidden layer mixed by the soft matrices:
/// `W'_ℓ = P_ℓ W_ℓ P_{ℓ-1}ᵀ`, `b'_ℓ = P_ℓ b_ℓ`.
pub(crate) struct SoftApplied {
    pub model: ModelParams,
    /// `W_ℓ P_{ℓ-1}ᵀ` per layer.
    right: Vec<Matrix>,
}

pub(crate) fn soft_apply(b: &ModelParams, mats: &[Matrix]) -> SoftApplied {
    let depth = b.depth();
    let mut right = Vec::with_capacity(depth);
    let mut layers = Vec::with_capacity(depth);
    for (l, layer) in b.layers.iter().enumerate() {
        let r = if l > 0 {
            layer.weight.dot(&mats[l - 1].t())
        } else {
            layer.weight.clone()
        };
        let (weight, bias) = if l + 1 < depth {
            (mats[l].dot(&r), mats[l].dot(&layer.bias))
        } else {
            (r.clone(), layer.bias.clone())
        };
        right.push(r);
        layers.push(Layer { weight, bias });
    }
    SoftApplied {
        model: ModelParams {
            layers,
            activation: b.activation,
        },
        right,
    }
}

/// Gradients with respect to each soft matrix, given the gradient of the
/// objective with respect to the mixed parameters.
pub(crate) fn soft_grads(b: &ModelParams, mats: &[Matrix], applied: &SoftApplied, d: &ModelParams) -> Vec<Matrix> {
    let hidden = mats.len();
    (0..hidden)
        .map(|k| {
            // hidden layer ℓ = k + 1 sits between weight matrices k and k + 1
            let dl = &d.layers[k];
            let mut g = dl.weight.dot(&applied.right[k].t());
            let bb = &b.layers[k].bias;
            for (i, &di) in dl.bias.iter().enumerate() {
                g.row_mut(i).scaled_add(di, bb);
            }
            let next = &b.layers[k + 1].weight;
            let left = if k + 1 < hidden {
                mats[k + 1].dot(next)
            } else {
                next.clone()
            };
            g += &d.layers[k + 1].weight.t().dot(&left);
            g
        })
        .collect()
}
