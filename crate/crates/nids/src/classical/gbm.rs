//! Gradient boosting for binary log-loss. Each stage fits a regression tree
//! to the residual (y - p) and fills its leaves with a Newton step
//! sum(residual) / sum(p (1 - p)).

use serde::{Deserialize, Serialize};

use super::tree::{fit_regression, Node, TreeConfig};
use crate::error::{Error, Result};
use crate::neural::layers::sigmoid;
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostingConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_split: usize,
}

impl Default for GradientBoostingConfig {
    fn default() -> Self {
        GradientBoostingConfig {
            n_stages: 100,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub config: GradientBoostingConfig,
    /// Base score: log-odds of the training positive rate.
    pub init_score: f64,
    pub trees: Vec<Node>,
    pub n_features: usize,
}

const HESSIAN_FLOOR: f64 = 1e-12;

impl GradientBoosting {
    pub fn fit(config: GradientBoostingConfig, x: &FeatureMatrix, y: &[u8]) -> Result<Self> {
        if x.n_rows != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.n_rows,
                actual: y.len(),
                context: "boosting labels".to_string(),
            });
        }
        let n = x.n_rows;
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == n {
            return Err(Error::SingleClass("gradient boosting".to_string()));
        }
        let base_rate = pos as f64 / n as f64;
        let init_score = (base_rate / (1.0 - base_rate)).ln();

        let tree_config = TreeConfig {
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split,
            features_per_split: None,
        };
        let rows: Vec<usize> = (0..n).collect();
        let mut raw = vec![init_score; n];
        let mut trees = Vec::with_capacity(config.n_stages);

        for _ in 0..config.n_stages {
            let probs: Vec<f64> = raw.iter().map(|&f| sigmoid(f)).collect();
            let residuals: Vec<f64> = probs
                .iter()
                .zip(y)
                .map(|(&p, &yi)| f64::from(yi) - p)
                .collect();
            let leaf_value = |rs: &[usize]| -> f64 {
                let num: f64 = rs.iter().map(|&r| residuals[r]).sum();
                let den: f64 = rs.iter().map(|&r| probs[r] * (1.0 - probs[r])).sum();
                num / den.max(HESSIAN_FLOOR)
            };
            let tree = fit_regression(x, &residuals, &rows, &tree_config, &leaf_value);
            for (i, f) in raw.iter_mut().enumerate() {
                *f += config.learning_rate * tree.predict(x.row(i));
            }
            trees.push(tree);
        }

        Ok(GradientBoosting {
            config,
            init_score,
            trees,
            n_features: x.n_cols,
        })
    }

    /// Raw additive score after each stage (index 0: base score only).
    pub fn staged_raw(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        let mut f = self.init_score;
        out.push(f);
        for tree in &self.trees {
            f += self.config.learning_rate * tree.predict(row);
            out.push(f);
        }
        out
    }

    pub fn predict_proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(*self.staged_raw(row).last().unwrap())
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.n_cols,
                context: "boosting features".to_string(),
            });
        }
        Ok((0..x.n_rows)
            .map(|r| self.predict_proba_row(x.row(r)))
            .collect())
    }
}
