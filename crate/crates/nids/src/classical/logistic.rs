//! L2-regularized logistic regression fitted by Newton-Raphson with a
//! Cholesky solve. The intercept is left unpenalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::layers::sigmoid;
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionConfig {
    /// L2 penalty strength.
    pub l2: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the max absolute Newton step.
    pub tolerance: f64,
    pub class_weights: Option<[f64; 2]>,
}

impl Default for LogisticRegressionConfig {
    fn default() -> Self {
        LogisticRegressionConfig {
            l2: 1.0,
            max_iterations: 1000,
            tolerance: 1e-8,
            class_weights: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub config: LogisticRegressionConfig,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticRegression {
    pub fn fit(config: LogisticRegressionConfig, x: &FeatureMatrix, y: &[u8]) -> Result<Self> {
        if x.n_rows != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.n_rows,
                actual: y.len(),
                context: "logistic labels".to_string(),
            });
        }
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::SingleClass("logistic regression".to_string()));
        }

        let d = x.n_cols + 1; // intercept last
        let n = x.n_rows;
        let sample_weights: Vec<f64> = y
            .iter()
            .map(|&yi| {
                config
                    .class_weights
                    .map_or(1.0, |w| if yi == 1 { w[1] } else { w[0] })
            })
            .collect();

        let mut beta = vec![0.0; d];
        let mut converged = false;
        let mut iterations = 0;

        for iter in 0..config.max_iterations {
            iterations = iter + 1;
            // gradient and Hessian of the penalized negative log-likelihood
            let mut grad = vec![0.0; d];
            let mut hess = vec![0.0; d * d];
            for r in 0..n {
                let row = x.row(r);
                let mut z = beta[d - 1];
                for (j, &v) in row.iter().enumerate() {
                    z += beta[j] * v;
                }
                let p = sigmoid(z);
                let s = sample_weights[r];
                let g = s * (p - f64::from(y[r]));
                let h = s * p * (1.0 - p);
                for j in 0..d {
                    let xj = if j == d - 1 { 1.0 } else { row[j] };
                    grad[j] += g * xj;
                    for k in j..d {
                        let xk = if k == d - 1 { 1.0 } else { row[k] };
                        hess[j * d + k] += h * xj * xk;
                    }
                }
            }
            for j in 0..d - 1 {
                grad[j] += config.l2 * beta[j];
                hess[j * d + j] += config.l2;
            }
            // mirror the upper triangle
            for j in 0..d {
                for k in 0..j {
                    hess[j * d + k] = hess[k * d + j];
                }
            }

            let step = cholesky_solve(&mut hess, &grad, d)?;
            let mut max_step: f64 = 0.0;
            for j in 0..d {
                beta[j] -= step[j];
                max_step = max_step.max(step[j].abs());
            }
            if max_step < config.tolerance {
                converged = true;
                break;
            }
        }

        Ok(LogisticRegression {
            config,
            weights: beta[..d - 1].to_vec(),
            intercept: beta[d - 1],
            converged,
            iterations,
        })
    }

    pub fn decision_function(&self, row: &[f64]) -> f64 {
        let mut z = self.intercept;
        for (w, &v) in self.weights.iter().zip(row) {
            z += w * v;
        }
        z
    }

    pub fn predict_proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision_function(row))
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: x.n_cols,
                context: "logistic features".to_string(),
            });
        }
        Ok((0..x.n_rows)
            .map(|r| self.predict_proba_row(x.row(r)))
            .collect())
    }
}

/// Solve A x = b for symmetric positive definite A (in place factorization).
fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    // A = L L^T, stored in the lower triangle of `a`
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag <= 0.0 {
            return Err(Error::InvalidArgument(
                "Hessian not positive definite".to_string(),
            ));
        }
        let diag = diag.sqrt();
        a[j * d + j] = diag;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / diag;
        }
    }
    // forward solve L z = b
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * d + k] * z[k];
        }
        z[i] = v / a[i * d + i];
    }
    // back solve L^T x = z
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut v = z[i];
        for k in i + 1..d {
            v -= a[k * d + i] * x[k];
        }
        x[i] = v / a[i * d + i];
    }
    Ok(x)
}
