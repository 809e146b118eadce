//! Random forest over class-weighted Gini trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification, Node, TreeConfig};
use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Per-class sample weights (index 0: negatives, 1: positives).
    pub class_weights: Option<[f64; 2]>,
    pub rng_seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        RandomForestConfig {
            n_trees: 200,
            max_depth: 10,
            min_samples_split: 2,
            class_weights: None,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: RandomForestConfig,
    pub trees: Vec<Node>,
    pub n_features: usize,
}

impl RandomForest {
    /// Fit with bootstrap sampling and sqrt(F) features per split. Each tree
    /// draws its own rng stream from the master seed.
    pub fn fit(config: RandomForestConfig, x: &FeatureMatrix, y: &[u8]) -> Result<Self> {
        if x.n_rows != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.n_rows,
                actual: y.len(),
                context: "random forest labels".to_string(),
            });
        }
        if x.n_rows == 0 {
            return Err(Error::InvalidArgument("empty training set".to_string()));
        }
        let weights: Vec<f64> = y
            .iter()
            .map(|&yi| {
                config
                    .class_weights
                    .map_or(1.0, |w| if yi == 1 { w[1] } else { w[0] })
            })
            .collect();
        let tree_config = TreeConfig {
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split,
            features_per_split: Some((x.n_cols as f64).sqrt().round().max(1.0) as usize),
        };
        let mut master = ChaCha20Rng::seed_from_u64(config.rng_seed);
        let tree_seeds: Vec<u64> = (0..config.n_trees).map(|_| master.gen()).collect();

        // trees are seeded independently, so parallel fitting stays deterministic
        let trees = tree_seeds
            .par_iter()
            .map(|&seed| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let rows: Vec<usize> =
                    (0..x.n_rows).map(|_| rng.gen_range(0..x.n_rows)).collect();
                fit_classification(x, y, &weights, &rows, &tree_config, &mut rng)
            })
            .collect();

        Ok(RandomForest {
            config,
            trees,
            n_features: x.n_cols,
        })
    }

    /// Positive-class probability: mean of the per-tree leaf frequencies.
    pub fn predict_proba_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.n_cols,
                context: "random forest features".to_string(),
            });
        }
        Ok((0..x.n_rows)
            .map(|r| self.predict_proba_row(x.row(r)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_data(n: usize) -> (FeatureMatrix, Vec<u8>) {
        // XOR-ish pattern a single stump cannot solve
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let a = (i % 7) as f64 / 7.0;
            let b = ((i * 3) % 11) as f64 / 11.0;
            values.push(a);
            values.push(b);
            labels.push(u8::from((a > 0.5) != (b > 0.5)));
        }
        let names = vec!["a".to_string(), "b".to_string()];
        (FeatureMatrix::new(values, names, n), labels)
    }

    #[test]
    fn fits_and_scores_in_unit_interval() {
        let (x, y) = grid_data(120);
        let config = RandomForestConfig {
            n_trees: 25,
            rng_seed: 5,
            ..Default::default()
        };
        let rf = RandomForest::fit(config, &x, &y).unwrap();
        let probs = rf.predict_proba(&x).unwrap();
        let correct = probs
            .iter()
            .zip(&y)
            .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
            .count();
        assert!(correct as f64 / y.len() as f64 > 0.95);
        assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn seed_determinism() {
        let (x, y) = grid_data(60);
        let config = RandomForestConfig {
            n_trees: 10,
            rng_seed: 9,
            ..Default::default()
        };
        let a = RandomForest::fit(config, &x, &y).unwrap();
        let b = RandomForest::fit(config, &x, &y).unwrap();
        assert_eq!(a.trees, b.trees);
        let mut config2 = config;
        config2.rng_seed = 10;
        let c = RandomForest::fit(config2, &x, &y).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn probability_is_mean_of_trees() {
        let (x, y) = grid_data(40);
        let config = RandomForestConfig {
            n_trees: 7,
            rng_seed: 1,
            ..Default::default()
        };
        let rf = RandomForest::fit(config, &x, &y).unwrap();
        let row = x.row(3);
        let mean =
            rf.trees.iter().map(|t| t.predict(row)).sum::<f64>() / rf.trees.len() as f64;
        assert!((rf.predict_proba_row(row) - mean).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_labels() {
        let (x, _) = grid_data(10);
        let err = RandomForest::fit(RandomForestConfig::default(), &x, &[1, 0]);
        assert!(err.is_err());
    }
}
