//! Propensity scores for matching: unregularized logistic regression of the
//! case indicator on comorbidity features, fitted by plain gradient descent.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::CohortError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdSettings {
    /// Stop once the training-loss improvement falls below this.
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for GdSettings {
    fn default() -> Self {
        GdSettings {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// A fitted propensity model. Features are standardized internally; `score`
/// applies the stored transform, so callers always pass raw feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    weights: Vec<f64>,
    intercept: f64,
    means: Vec<f64>,
    stds: Vec<f64>,
    pub iterations: u32,
    pub converged: bool,
}

impl PropensityFit {
    pub fn score(&self, features: &[f64]) -> f64 {
        assert_eq!(features.len(), self.weights.len());
        let mut z = self.intercept;
        for i in 0..features.len() {
            if self.stds[i] > 0.0 {
                z += self.weights[i] * (features[i] - self.means[i]) / self.stds[i];
            }
        }
        sigmoid(z)
    }

    /// Weights on the standardized scale, for monotonicity checks.
    pub fn standardized_weights(&self) -> &[f64] {
        &self.weights
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

/// Mean negative log-likelihood, computed in a form stable for large |z|.
fn mean_nll(z: &[f64], y: &[bool]) -> f64 {
    let mut total = 0.0;
    for (&zi, &yi) in z.iter().zip(y) {
        // log(1 + e^-|z|) + max(0, -yz) form of -log p(y|z)
        let signed = if yi { zi } else { -zi };
        total += (1.0 + (-signed.abs()).exp()).ln() + (-signed).max(0.0);
    }
    total / z.len() as f64
}

/// Fits case-vs-candidate logistic regression by full-batch gradient descent.
///
/// Features are standardized (zero-variance columns are dropped from the
/// optimization), the step size is 1/L from the logistic curvature bound, and
/// iteration stops when the loss improvement drops below `settings.tol` with
/// a near-zero gradient, or at `settings.max_iter`.
pub fn fit_propensity(
    rows: &[(Vec<f64>, bool)],
    settings: GdSettings,
) -> Result<PropensityFit, CohortError> {
    if rows.is_empty() {
        return Err(CohortError::EmptyInput);
    }
    let dim = rows[0].0.len();
    if rows
        .iter()
        .any(|(f, _)| f.len() != dim || f.iter().any(|v| !v.is_finite()))
    {
        return Err(CohortError::NonFiniteFeatures);
    }
    let n = rows.len();

    let mut means = vec![0.0; dim];
    let mut stds = vec![0.0; dim];
    for j in 0..dim {
        let first = rows[0].0[j];
        if rows.iter().all(|(f, _)| f[j] == first) {
            // Constant column: exactly zero variance, exempt from scaling.
            means[j] = first;
            continue;
        }
        let sum: f64 = rows.iter().map(|(f, _)| f[j]).sum();
        means[j] = sum / n as f64;
        let ss: f64 = rows.iter().map(|(f, _)| (f[j] - means[j]).powi(2)).sum();
        stds[j] = (ss / n as f64).sqrt();
    }

    // Standardized design matrix, row-major.
    let mut x = vec![0.0; n * dim];
    for (r, (f, _)) in rows.iter().enumerate() {
        for j in 0..dim {
            if stds[j] > 0.0 {
                x[r * dim + j] = (f[j] - means[j]) / stds[j];
            }
        }
    }
    let y: Vec<bool> = rows.iter().map(|(_, c)| *c).collect();

    // Curvature bound: hessian of the mean loss is at most
    // 0.25 * mean ||(x, 1)||^2 in operator norm.
    let mean_sq: f64 = x.iter().map(|v| v * v).sum::<f64>() / n as f64 + 1.0;
    let lr = 1.0 / (0.25 * mean_sq).max(1e-12);

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut z = vec![0.0; n];
    let mut grad_w = vec![0.0; dim];
    let mut prev_loss = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..settings.max_iter {
        iterations = iter + 1;
        for r in 0..n {
            let mut zi = b;
            for j in 0..dim {
                zi += w[j] * x[r * dim + j];
            }
            z[r] = zi;
        }
        let loss = mean_nll(&z, &y);

        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for r in 0..n {
            let residual = sigmoid(z[r]) - if y[r] { 1.0 } else { 0.0 };
            grad_b += residual / n as f64;
            for j in 0..dim {
                grad_w[j] += residual * x[r * dim + j] / n as f64;
            }
        }

        let grad_inf = grad_w
            .iter()
            .chain(core::iter::once(&grad_b))
            .fold(0.0_f64, |a, g| a.max(g.abs()));
        // The gradient check keeps a small per-step improvement from stopping
        // the descent while it is still far from the optimum.
        if prev_loss - loss < settings.tol && grad_inf < settings.tol {
            converged = true;
            break;
        }
        prev_loss = loss;

        for j in 0..dim {
            w[j] -= lr * grad_w[j];
        }
        b -= lr * grad_b;
    }

    Ok(PropensityFit {
        weights: w,
        intercept: b,
        means,
        stds,
        iterations,
        converged,
    })
}
