//! Small feed-forward network for binary classification, trained by
//! minibatch SGD (optional momentum) or Adam on standardized inputs. The
//! loss/gradient pair is exposed over a flat parameter vector so tests can
//! check the backward pass against central finite differences.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::EnsembleError;
use crate::sample::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpSolver {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden_layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub solver: MlpSolver,
    /// L2 penalty on weights (not biases).
    pub alpha: f64,
    /// 0 means auto: min(200, n).
    pub batch_size: usize,
    pub learning_rate: LrSchedule,
    pub learning_rate_init: f64,
    /// Epoch cap.
    pub max_iter: usize,
    pub tol: f64,
    /// Epochs without `tol` improvement before stopping (or shrinking the
    /// rate when the schedule is adaptive).
    pub n_iter_no_change: usize,
    pub momentum: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_layer_sizes: vec![100],
            activation: Activation::Relu,
            solver: MlpSolver::Adam,
            alpha: 1e-4,
            batch_size: 0,
            learning_rate: LrSchedule::Constant,
            learning_rate_init: 1e-3,
            max_iter: 200,
            tol: 1e-4,
            n_iter_no_change: 10,
            momentum: 0.9,
        }
    }
}

/// Layer sizes from input to the single output unit, plus the hidden
/// activation. Parameters live in one flat vector: per layer, weights in
/// row-major (out x in) order, then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpArch {
    pub fn n_params(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// (weights offset, biases offset, in, out) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut at = 0;
        for k in 0..l {
            at += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        let fan_in = self.sizes[l];
        let fan_out = self.sizes[l + 1];
        (at, at + fan_in * fan_out, fan_in, fan_out)
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }
}

fn activate(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
        Activation::Logistic => sigmoid(z),
    }
}

/// Derivative expressed in terms of the activation value.
fn activate_deriv(a: Activation, out: f64) -> f64 {
    match a {
        Activation::Relu => {
            if out > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - out * out,
        Activation::Logistic => out * (1.0 - out),
    }
}

fn forward(arch: &MlpArch, flat: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(arch.sizes.len());
    acts.push(x.to_vec());
    for l in 0..arch.n_layers() {
        let (w_off, b_off, fan_in, fan_out) = arch.layer_offsets(l);
        let prev = &acts[l];
        let mut out = Vec::with_capacity(fan_out);
        for u in 0..fan_out {
            let mut z = flat[b_off + u];
            let row = &flat[w_off + u * fan_in..w_off + (u + 1) * fan_in];
            for (wv, av) in row.iter().zip(prev) {
                z += wv * av;
            }
            out.push(if l + 1 == arch.sizes.len() - 1 { z } else { activate(arch.activation, z) });
        }
        acts.push(out);
    }
    acts
}

/// Mean log loss over the batch plus 0.5 * alpha * ||W||^2 / batch, and its
/// gradient with respect to every flat parameter.
pub fn mlp_loss_and_grad(
    arch: &MlpArch,
    flat: &[f64],
    xs: &[&[f64]],
    ys: &[f64],
    alpha: f64,
) -> (f64, Vec<f64>) {
    let n = xs.len() as f64;
    let n_layers = arch.n_layers();
    let mut grad = vec![0.0; flat.len()];
    let mut loss = 0.0;

    for (x, &y) in xs.iter().zip(ys) {
        let acts = forward(arch, flat, x);
        let z_out = acts[n_layers][0];
        let p = sigmoid(z_out);
        loss += if z_out >= 0.0 {
            (1.0 + (-z_out).exp()).ln() + (1.0 - y) * z_out
        } else {
            -z_out + (1.0 + z_out.exp()).ln() + (1.0 - y) * z_out
        };

        // Delta holds d(sample loss)/dz for the current layer.
        let mut delta = vec![p - y];
        for l in (0..n_layers).rev() {
            let (w_off, b_off, fan_in, fan_out) = arch.layer_offsets(l);
            let prev = &acts[l];
            for u in 0..fan_out {
                let d = delta[u];
                grad[b_off + u] += d;
                let g_row = &mut grad[w_off + u * fan_in..w_off + (u + 1) * fan_in];
                for (g, av) in g_row.iter_mut().zip(prev) {
                    *g += d * av;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; fan_in];
                for u in 0..fan_out {
                    let d = delta[u];
                    let row = &flat[w_off + u * fan_in..w_off + (u + 1) * fan_in];
                    for (nv, wv) in next.iter_mut().zip(row) {
                        *nv += wv * d;
                    }
                }
                for (nv, av) in next.iter_mut().zip(&acts[l]) {
                    *nv *= activate_deriv(arch.activation, *av);
                }
                delta = next;
            }
        }
    }

    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    // Penalty on weights only.
    let mut penalty = 0.0;
    for l in 0..n_layers {
        let (w_off, b_off, _, _) = arch.layer_offsets(l);
        for j in w_off..b_off {
            penalty += flat[j] * flat[j];
            grad[j] += alpha * flat[j] / n;
        }
    }
    loss += 0.5 * alpha * penalty / n;
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub arch: MlpArch,
    pub flat: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Average minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
    pub epochs: usize,
}

impl MlpModel {
    pub fn predict_positive(&self, features: &[f64]) -> f64 {
        let x = self.standardize(features);
        let acts = forward(&self.arch, &self.flat, &x);
        sigmoid(acts[self.arch.n_layers()][0])
    }

    fn standardize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .enumerate()
            .map(|(j, &v)| if self.stds[j] > 0.0 { (v - self.means[j]) / self.stds[j] } else { 0.0 })
            .collect()
    }
}

pub fn train_mlp(
    params: &MlpParams,
    samples: &[LabeledSample],
    seed: u64,
) -> Result<MlpModel, EnsembleError> {
    if params.learning_rate_init <= 0.0 || params.max_iter == 0 {
        return Err(EnsembleError::UnsupportedParam {
            field: "learning_rate_init/max_iter",
            value: alloc::format!("{}/{}", params.learning_rate_init, params.max_iter),
        });
    }
    let n = samples.len();
    let d = samples[0].width();
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.full_vector()).collect();
    let ys: Vec<f64> = samples
        .iter()
        .map(|s| if s.label.is_case() { 1.0 } else { 0.0 })
        .collect();
    let (means, stds) = super::logistic::column_moments(&rows, d);
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            (0..d)
                .map(|j| if stds[j] > 0.0 { (r[j] - means[j]) / stds[j] } else { 0.0 })
                .collect()
        })
        .collect();

    let mut sizes = Vec::with_capacity(params.hidden_layer_sizes.len() + 2);
    sizes.push(d);
    sizes.extend_from_slice(&params.hidden_layer_sizes);
    sizes.push(1);
    let arch = MlpArch { sizes, activation: params.activation };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = vec![0.0; arch.n_params()];
    for l in 0..arch.n_layers() {
        let (w_off, b_off, fan_in, fan_out) = arch.layer_offsets(l);
        let factor = if params.activation == Activation::Logistic { 2.0 } else { 6.0 };
        let bound = (factor / (fan_in + fan_out) as f64).sqrt();
        for j in w_off..b_off + fan_out {
            flat[j] = rng.random_range(-bound..bound);
        }
    }

    let batch = if params.batch_size == 0 { n.min(200) } else { params.batch_size.min(n) };
    let mut lr = params.learning_rate_init;
    let mut velocity = vec![0.0; flat.len()];
    let mut adam_m = vec![0.0; flat.len()];
    let mut adam_v = vec![0.0; flat.len()];
    let mut adam_t = 0u32;
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut no_improve = 0;
    let mut epochs = 0;

    for _ in 0..params.max_iter {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = mlp_loss_and_grad(&arch, &flat, &bx, &by, params.alpha);
            epoch_loss += loss * chunk.len() as f64;
            match params.solver {
                MlpSolver::Sgd => {
                    for ((v, g), p) in velocity.iter_mut().zip(&grad).zip(flat.iter_mut()) {
                        *v = params.momentum * *v - lr * g;
                        *p += *v;
                    }
                }
                MlpSolver::Adam => {
                    adam_t += 1;
                    let b1 = 0.9;
                    let b2 = 0.999;
                    let corr1 = 1.0 - b1.powi(adam_t as i32);
                    let corr2 = 1.0 - b2.powi(adam_t as i32);
                    for ((m, v), (g, p)) in adam_m
                        .iter_mut()
                        .zip(adam_v.iter_mut())
                        .zip(grad.iter().zip(flat.iter_mut()))
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / corr1) / ((*v / corr2).sqrt() + 1e-8);
                    }
                }
            }
        }
        epochs += 1;
        let epoch_mean = epoch_loss / n as f64;
        loss_curve.push(epoch_mean);
        if epoch_mean < best_loss - params.tol {
            no_improve = 0;
        } else {
            no_improve += 1;
        }
        best_loss = best_loss.min(epoch_mean);
        if no_improve >= params.n_iter_no_change.max(1) {
            if params.learning_rate == LrSchedule::Adaptive && lr > 1e-6 {
                lr /= 5.0;
                no_improve = 0;
            } else {
                break;
            }
        }
    }

    Ok(MlpModel { arch, flat, means, stds, loss_curve, epochs })
}
