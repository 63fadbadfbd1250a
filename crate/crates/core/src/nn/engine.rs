//! Batched forward, backward and R-operator passes, generic over the float
//! type so training can run in single precision while analysis uses doubles.
//!
//! Batches are `N × d` with one example per row.

use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};

use super::model::{Activation, Layer};
use super::LossKind;

pub(crate) trait Float:
    LinalgScalar + num_traits::Float + ScalarOperand + AddAssign + Debug + Send + Sync + 'static
{
}

impl Float for f32 {}
impl Float for f64 {}

fn affine<T: Float>(z: ArrayView2<T>, layer: &Layer<T>) -> Array2<T> {
    let mut a = z.dot(&layer.weight.t());
    a += &layer.bias;
    a
}

/// Post-activation outputs `z_0 … z_L`, with `z_0 = x` and logits last.
pub(crate) fn forward<T: Float>(layers: &[Layer<T>], act: Activation, x: ArrayView2<T>) -> Vec<Array2<T>> {
    let mut zs = Vec::with_capacity(layers.len() + 1);
    zs.push(x.to_owned());
    for (l, layer) in layers.iter().enumerate() {
        let mut a = affine(zs[l].view(), layer);
        if l + 1 < layers.len() && act == Activation::Relu {
            a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        zs.push(a);
    }
    zs
}

/// Derivative of the hidden nonlinearity, read off the post-activation value.
#[inline]
fn slope<T: Float>(act: Activation, z: T) -> T {
    match act {
        Activation::Relu => {
            if z > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Linear => T::one(),
    }
}

fn softmax_rows<T: Float>(logits: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let mut p = logits.clone();
    let mut lse = Array1::zeros(logits.nrows());
    for (mut row, out) in p.rows_mut().into_iter().zip(lse.iter_mut()) {
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
        *out = m + s.ln();
    }
    (p, lse)
}

/// Sum of per-example losses and `∂(scale · sum)/∂logits`.
fn loss_head<T: Float>(logits: &Array2<T>, labels: &[usize], kind: LossKind, scale: T) -> (T, Array2<T>) {
    match kind {
        LossKind::CrossEntropy => {
            let (mut p, lse) = softmax_rows(logits);
            let mut total = T::zero();
            for (n, &y) in labels.iter().enumerate() {
                total = total + lse[n] - logits[[n, y]];
                p[[n, y]] = p[[n, y]] - T::one();
            }
            p.mapv_inplace(|v| v * scale);
            (total, p)
        }
        LossKind::Mse => {
            let mut d = logits.clone();
            for (n, &y) in labels.iter().enumerate() {
                d[[n, y]] = d[[n, y]] - T::one();
            }
            let total = d.iter().fold(T::zero(), |acc, &v| acc + v * v);
            let two = T::one() + T::one();
            d.mapv_inplace(|v| two * scale * v);
            (total, d)
        }
    }
}

/// Summed loss over the batch and the gradient of `scale · sum`.
pub(crate) fn loss_and_grad<T: Float>(
    layers: &[Layer<T>],
    act: Activation,
    x: ArrayView2<T>,
    labels: &[usize],
    kind: LossKind,
    scale: T,
) -> (T, Vec<Layer<T>>) {
    let zs = forward(layers, act, x);
    let (total, mut delta) = loss_head(&zs[layers.len()], labels, kind, scale);
    let mut grads: Vec<Layer<T>> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let z_prev = &zs[l];
        grads.push(Layer {
            weight: delta.t().dot(z_prev),
            bias: delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            let mut back = delta.dot(&layers[l].weight);
            Zip::from(&mut back).and(z_prev).for_each(|d, &z| *d = *d * slope(act, z));
            delta = back;
        }
    }
    grads.reverse();
    (total, grads)
}

/// Summed loss only; skips the backward pass.
pub(crate) fn loss_sum<T: Float>(
    layers: &[Layer<T>],
    act: Activation,
    x: ArrayView2<T>,
    labels: &[usize],
    kind: LossKind,
) -> (T, usize) {
    let zs = forward(layers, act, x);
    let logits = &zs[layers.len()];
    let (total, _) = loss_head(logits, labels, kind, T::one());
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().cloned()) == y)
        .count();
    (total, correct)
}

pub(crate) fn argmax<T: Float>(it: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, v) in it.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Hessian of `scale · sum loss` applied to `dir`, by forward-over-reverse
/// differentiation (the R-operator).
pub(crate) fn hvp<T: Float>(
    layers: &[Layer<T>],
    act: Activation,
    x: ArrayView2<T>,
    labels: &[usize],
    kind: LossKind,
    scale: T,
    dir: &[Layer<T>],
) -> Vec<Layer<T>> {
    let depth = layers.len();
    let zs = forward(layers, act, x);

    // Forward pass of directional derivatives R{z_ℓ}.
    let mut rzs: Vec<Array2<T>> = Vec::with_capacity(depth + 1);
    rzs.push(Array2::zeros(x.raw_dim()));
    for l in 0..depth {
        let mut ra = affine(zs[l].view(), &dir[l]);
        if l > 0 {
            ra += &rzs[l].dot(&layers[l].weight.t());
        }
        if l + 1 < depth {
            Zip::from(&mut ra).and(&zs[l + 1]).for_each(|r, &z| *r = *r * slope(act, z));
        }
        rzs.push(ra);
    }

    let logits = &zs[depth];
    let r_logits = &rzs[depth];
    let (_, mut delta) = loss_head(logits, labels, kind, scale);
    let mut r_delta = match kind {
        LossKind::CrossEntropy => {
            let (p, _) = softmax_rows(logits);
            let mut rd = Array2::zeros(p.raw_dim());
            for ((mut out, prow), rrow) in rd.rows_mut().into_iter().zip(p.rows()).zip(r_logits.rows()) {
                let mean = prow.iter().zip(rrow.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                Zip::from(&mut out)
                    .and(&prow)
                    .and(&rrow)
                    .for_each(|o, &pp, &rr| *o = scale * pp * (rr - mean));
            }
            rd
        }
        LossKind::Mse => {
            let two = T::one() + T::one();
            r_logits.mapv(|v| two * scale * v)
        }
    };

    let mut out: Vec<Layer<T>> = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let mut weight = r_delta.t().dot(&zs[l]);
        if l > 0 {
            weight += &delta.t().dot(&rzs[l]);
        }
        out.push(Layer {
            weight,
            bias: r_delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            let mut back = delta.dot(&layers[l].weight);
            let mut r_back = r_delta.dot(&layers[l].weight) + delta.dot(&dir[l].weight);
            Zip::from(&mut back)
                .and(&mut r_back)
                .and(&zs[l])
                .for_each(|d, r, &z| {
                    let s = slope(act, z);
                    *d = *d * s;
                    *r = *r * s;
                });
            delta = back;
            r_delta = r_back;
        }
    }
    out.reverse();
    out
}
