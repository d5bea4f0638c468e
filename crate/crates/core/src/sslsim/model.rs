//! Bias-augmented linear classifier with hand-written gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// One sigmoid per concept, trained with binary cross entropy.
    Sigmoid,
    /// Softmax over leaf classes, trained with cross entropy.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub dim: usize,
    pub outputs: usize,
    pub head: Head,
    /// `(dim + 1) × outputs`, row-major; the last row is the bias.
    pub weights: Vec<f64>,
}

impl ToyModel {
    pub fn new<R: Rng>(dim: usize, outputs: usize, head: Head, init_scale: f64, rng: &mut R) -> Self {
        let weights = (0..(dim + 1) * outputs)
            .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ToyModel {
            dim,
            outputs,
            head,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// `n × outputs` pre-activations for row-major `n × dim` features.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = (self.dim, self.outputs);
        let n = x.len() / d;
        let bias = &self.weights[d * k..];
        let mut z = Vec::with_capacity(n * k);
        for row in x.chunks_exact(d) {
            let start = z.len();
            z.extend_from_slice(bias);
            for (j, &xj) in row.iter().enumerate() {
                let w = &self.weights[j * k..(j + 1) * k];
                for (zk, wk) in z[start..].iter_mut().zip(w) {
                    *zk += xj * wk;
                }
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        match self.head {
            Head::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Head::Softmax => z.chunks_exact_mut(self.outputs).for_each(softmax_in_place),
        }
        z
    }

    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// Inputs of one objective evaluation. Targets are `n × outputs`: multi-hot
/// for the sigmoid head, one-hot for the softmax head. Unlabeled rows with
/// `mask_u[i] == false` contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub x_l: &'a [f64],
    pub y_l: &'a [f64],
    pub x_u: &'a [f64],
    pub y_u: &'a [f64],
    pub mask_u: &'a [bool],
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub supervised: f64,
    pub unsupervised: f64,
    pub total: f64,
}

/// Losses and the gradient of the total with respect to the weights.
/// Unsupervised gradients are skipped entirely when `lambda == 0`.
pub fn loss_and_grad(model: &ToyModel, inp: &LossInputs<'_>) -> (Losses, Vec<f64>) {
    let mut grad = vec![0.0; model.weights.len()];
    let n_l = inp.y_l.len() / model.outputs.max(1);
    let all = vec![true; n_l];
    let supervised = term(model, inp.x_l, inp.y_l, &all, 1.0, &mut grad);
    let unsupervised = if inp.lambda > 0.0 {
        term(model, inp.x_u, inp.y_u, inp.mask_u, inp.lambda, &mut grad)
    } else {
        term_loss(model, inp.x_u, inp.y_u, inp.mask_u)
    };
    let losses = Losses {
        supervised,
        unsupervised,
        total: supervised + inp.lambda * unsupervised,
    };
    (losses, grad)
}

pub fn losses(model: &ToyModel, inp: &LossInputs<'_>) -> Losses {
    let n_l = inp.y_l.len() / model.outputs.max(1);
    let supervised = term_loss(model, inp.x_l, inp.y_l, &vec![true; n_l]);
    let unsupervised = term_loss(model, inp.x_u, inp.y_u, inp.mask_u);
    Losses {
        supervised,
        unsupervised,
        total: supervised + inp.lambda * unsupervised,
    }
}

fn term_loss(model: &ToyModel, x: &[f64], y: &[f64], mask: &[bool]) -> f64 {
    let mut scratch = vec![0.0; model.weights.len()];
    term(model, x, y, mask, 0.0, &mut scratch)
}

/// Mean loss over `n` rows (and over concepts for the sigmoid head), adding
/// `weight ×` its gradient into `grad`. Masked rows still count in `n`.
fn term(model: &ToyModel, x: &[f64], y: &[f64], mask: &[bool], weight: f64, grad: &mut [f64]) -> f64 {
    let (d, k) = (model.dim, model.outputs);
    let n = mask.len();
    if n == 0 {
        return 0.0;
    }
    let z = model.logits(x);
    let norm = match model.head {
        Head::Sigmoid => (n * k) as f64,
        Head::Softmax => n as f64,
    };
    let mut loss = 0.0;
    let mut dz = vec![0.0; k];
    for i in (0..n).filter(|&i| mask[i]) {
        let zi = &z[i * k..(i + 1) * k];
        let yi = &y[i * k..(i + 1) * k];
        match model.head {
            Head::Sigmoid => {
                for c in 0..k {
                    loss += softplus(zi[c]) - yi[c] * zi[c];
                    dz[c] = sigmoid(zi[c]) - yi[c];
                }
            }
            Head::Softmax => {
                let m = zi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + zi.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                let mass: f64 = yi.iter().sum();
                for c in 0..k {
                    loss -= yi[c] * zi[c];
                    dz[c] = mass * (zi[c] - lse).exp() - yi[c];
                }
                loss += mass * lse;
            }
        }
        if weight != 0.0 {
            let scale = weight / norm;
            let xi = &x[i * d..(i + 1) * d];
            for (j, &xj) in xi.iter().chain(std::iter::once(&1.0)).enumerate() {
                let g = &mut grad[j * k..(j + 1) * k];
                for c in 0..k {
                    g[c] += scale * xj * dz[c];
                }
            }
        }
    }
    loss / norm
}
