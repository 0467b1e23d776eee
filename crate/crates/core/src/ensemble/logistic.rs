//! L2-penalized logistic regression fit by plain gradient descent on
//! internally standardized features. The solver knob from sweep configs is
//! accepted and recorded but every name maps to this one fitter.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::EnsembleError;
use crate::sample::LabeledSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    /// Inverse regularization strength; the penalty term is ||w||^2 / (2 C n).
    pub c: f64,
    /// Convergence threshold on the max-norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Accepted for config compatibility; all names run the same fitter.
    pub solver: String,
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            c: 1.0,
            tol: 1e-4,
            max_iter: 5000,
            solver: String::from("lbfgs"),
        }
    }
}

const KNOWN_SOLVERS: [&str; 5] = ["lbfgs", "liblinear", "newton-cg", "sag", "saga"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    /// Weights in original (unstandardized) feature order.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LrModel {
    pub fn predict_positive(&self, features: &[f64]) -> f64 {
        let mut z = self.intercept;
        for (j, (&w, &x)) in self.weights.iter().zip(features).enumerate() {
            if self.stds[j] > 0.0 {
                z += w * (x - self.means[j]) / self.stds[j];
            }
        }
        sigmoid(z)
    }

    /// A model that ignores its input; test scaffolding for ensemble-level
    /// behavior.
    pub fn constant(positive: f64) -> Self {
        LrModel {
            weights: vec![],
            intercept: (positive / (1.0 - positive)).ln(),
            means: vec![],
            stds: vec![],
            iterations: 0,
            converged: true,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn train_lr(params: &LrParams, samples: &[LabeledSample]) -> Result<LrModel, EnsembleError> {
    if !KNOWN_SOLVERS.contains(&params.solver.as_str()) {
        return Err(EnsembleError::UnsupportedParam {
            field: "solver",
            value: params.solver.clone(),
        });
    }
    let n = samples.len();
    let d = samples[0].width();
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.full_vector()).collect();
    let ys: Vec<f64> = samples
        .iter()
        .map(|s| if s.label.is_case() { 1.0 } else { 0.0 })
        .collect();

    let (means, stds) = column_moments(&rows, d);
    let std_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            (0..d)
                .map(|j| if stds[j] > 0.0 { (r[j] - means[j]) / stds[j] } else { 0.0 })
                .collect()
        })
        .collect();

    // Objective: mean log loss + ||w||^2 / (2 C n), intercept unpenalized.
    let penalty = 1.0 / (params.c * n as f64);
    // Lipschitz bound for the step size: 0.25 mean ||x,1||^2 from the log
    // loss Hessian plus the penalty curvature.
    let mean_sq = std_rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .sum::<f64>()
        / n as f64;
    let lr = 1.0 / (0.25 * mean_sq + penalty).max(1e-12);

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..params.max_iter {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &y) in std_rows.iter().zip(&ys) {
            let mut z = b;
            for (wj, xj) in w.iter().zip(row) {
                z += wj * xj;
            }
            let err = sigmoid(z) - y;
            for (g, xj) in gw.iter_mut().zip(row) {
                *g += err * xj;
            }
            gb += err;
        }
        let mut grad_inf: f64 = 0.0;
        for (g, wj) in gw.iter_mut().zip(&w) {
            *g = *g / n as f64 + penalty * wj;
            grad_inf = grad_inf.max(g.abs());
        }
        gb /= n as f64;
        grad_inf = grad_inf.max(gb.abs());
        iterations += 1;
        if grad_inf < params.tol {
            converged = true;
            break;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= lr * g;
        }
        b -= lr * gb;
    }

    Ok(LrModel {
        weights: w,
        intercept: b,
        means,
        stds,
        iterations,
        converged,
    })
}

pub(crate) fn column_moments(rows: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    let mut stds = vec![0.0; d];
    for j in 0..d {
        let first = rows[0][j];
        if rows.iter().all(|r| r[j] == first) {
            means[j] = first;
            continue;
        }
        let sum: f64 = rows.iter().map(|r| r[j]).sum();
        let mean = sum / n;
        let var: f64 = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
        means[j] = mean;
        stds[j] = var.sqrt();
    }
    (means, stds)
}
