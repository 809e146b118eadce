//! Binary decision trees: a Gini classification tree (random forest member)
//! and a squared-error regression tree (boosting stage). Both use exact
//! greedy splits over sorted feature values with deterministic tie-breaks
//! (lower feature index, then lower threshold).

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; None means all.
    pub features_per_split: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 10,
            min_samples_split: 2,
            features_per_split: None,
        }
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Fit a classification tree; leaves hold the weighted positive-class
/// frequency. `rows` may contain repeats (bootstrap sampling).
pub fn fit_classification(
    x: &FeatureMatrix,
    y: &[u8],
    weights: &[f64],
    rows: &[usize],
    config: &TreeConfig,
    rng: &mut ChaCha20Rng,
) -> Node {
    grow(
        x,
        rows,
        config,
        rng,
        0,
        &|rows| {
            let mut pos = 0.0;
            let mut total = 0.0;
            for &r in rows {
                total += weights[r];
                if y[r] == 1 {
                    pos += weights[r];
                }
            }
            if total == 0.0 {
                0.0
            } else {
                pos / total
            }
        },
        &|rows| gini_impurity(y, weights, rows),
        &|rows| {
            // a node that is pure in labels cannot be improved
            let first = y[rows[0]];
            rows.iter().all(|&r| y[r] == first)
        },
    )
}

/// Fit a regression tree on targets; leaves hold `leaf_value(rows)` so a
/// caller can substitute a Newton step for the plain mean.
pub fn fit_regression(
    x: &FeatureMatrix,
    targets: &[f64],
    rows: &[usize],
    config: &TreeConfig,
    leaf_value: &dyn Fn(&[usize]) -> f64,
) -> Node {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    use rand::SeedableRng;
    grow(
        x,
        rows,
        config,
        &mut rng,
        0,
        leaf_value,
        &|rows| {
            // weighted SSE impurity = variance * n
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&r| targets[r]).sum::<f64>() / n;
            rows.iter()
                .map(|&r| (targets[r] - mean).powi(2))
                .sum::<f64>()
                / n
        },
        &|rows| {
            let first = targets[rows[0]];
            rows.iter().all(|&r| targets[r] == first)
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn grow(
    x: &FeatureMatrix,
    rows: &[usize],
    config: &TreeConfig,
    rng: &mut ChaCha20Rng,
    depth: usize,
    leaf_value: &dyn Fn(&[usize]) -> f64,
    impurity: &dyn Fn(&[usize]) -> f64,
    is_pure: &dyn Fn(&[usize]) -> bool,
) -> Node {
    if depth >= config.max_depth || rows.len() < config.min_samples_split || is_pure(rows) {
        return Node::Leaf {
            value: leaf_value(rows),
        };
    }

    let features: Vec<usize> = match config.features_per_split {
        Some(k) if k < x.n_cols => {
            let mut all: Vec<usize> = (0..x.n_cols).collect();
            all.shuffle(rng);
            let mut picked: Vec<usize> = all.into_iter().take(k).collect();
            picked.sort_unstable();
            picked
        }
        _ => (0..x.n_cols).collect(),
    };

    let parent_impurity = impurity(rows);
    let mut best: Option<SplitChoice> = None;
    for &f in &features {
        if let Some(c) = best_split_on_feature(x, rows, f, impurity) {
            let better = match &best {
                None => true,
                Some(b) => c.score < b.score - 1e-12,
            };
            if better {
                best = Some(c);
            }
        }
    }

    let Some(choice) = best else {
        return Node::Leaf {
            value: leaf_value(rows),
        };
    };
    if choice.score >= parent_impurity - 1e-12 {
        return Node::Leaf {
            value: leaf_value(rows),
        };
    }

    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&r| x.get(r, choice.feature) <= choice.threshold);
    Node::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left: Box::new(grow(
            x, &left_rows, config, rng, depth + 1, leaf_value, impurity, is_pure,
        )),
        right: Box::new(grow(
            x, &right_rows, config, rng, depth + 1, leaf_value, impurity, is_pure,
        )),
    }
}

/// Best threshold on one feature; score is the size-weighted mean child
/// impurity. Thresholds are midpoints between consecutive distinct values.
fn best_split_on_feature(
    x: &FeatureMatrix,
    rows: &[usize],
    feature: usize,
    impurity: &dyn Fn(&[usize]) -> f64,
) -> Option<SplitChoice> {
    let mut sorted: Vec<usize> = rows.to_vec();
    sorted.sort_by(|&a, &b| {
        x.get(a, feature)
            .partial_cmp(&x.get(b, feature))
            .unwrap()
            .then(a.cmp(&b))
    });

    let n = sorted.len() as f64;
    let mut best: Option<SplitChoice> = None;
    for i in 1..sorted.len() {
        let lo = x.get(sorted[i - 1], feature);
        let hi = x.get(sorted[i], feature);
        if lo == hi {
            continue;
        }
        let threshold = (lo + hi) / 2.0;
        let (left, right) = sorted.split_at(i);
        let score =
            (left.len() as f64 * impurity(left) + right.len() as f64 * impurity(right)) / n;
        let better = match &best {
            None => true,
            Some(b) => score < b.score - 1e-12,
        };
        if better {
            best = Some(SplitChoice {
                feature,
                threshold,
                score,
            });
        }
    }
    best
}

pub fn gini_impurity(y: &[u8], weights: &[f64], rows: &[usize]) -> f64 {
    let mut pos = 0.0;
    let mut total = 0.0;
    for &r in rows {
        total += weights[r];
        if y[r] == 1 {
            pos += weights[r];
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}
