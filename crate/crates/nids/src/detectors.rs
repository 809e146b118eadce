//! The four attack-specialized detector pipelines: architecture, resampling,
//! loss, optional classical ensemble, and decision threshold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::classical::{
    GradientBoosting, GradientBoostingConfig, LogisticRegression, LogisticRegressionConfig,
    RandomForest, RandomForestConfig,
};
use crate::dataset::AttackCategory;
use crate::error::{Error, Result};
use crate::evaluation::{confusion, f1};
use crate::neural::train::{train, TrainConfig, TrainHistory};
use crate::neural::{
    predict_proba, Activation, FocalLossParams, LayerSpec, NetworkSpec, Padding, Params,
};
use crate::preprocess::FeatureMatrix;
use crate::resample::{resample, ResampleConfig, ResampleMethod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    Fixed(f64),
    OptimizeF1,
}

/// Classical ensemble members fused with the network by a weighted
/// probability sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub forest: RandomForestConfig,
    pub boosting: GradientBoostingConfig,
    pub logistic: LogisticRegressionConfig,
    /// Weights for (network, forest, boosting, logistic); must sum to 1.
    pub weights: [f64; 4],
    /// Whether members train on the resampled fold (true) or the raw fold.
    pub members_on_resampled: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            forest: RandomForestConfig {
                class_weights: Some([1.0, 5.0]),
                ..Default::default()
            },
            boosting: GradientBoostingConfig::default(),
            logistic: LogisticRegressionConfig {
                class_weights: Some([1.0, 4.0]),
                ..Default::default()
            },
            weights: [0.4, 0.3, 0.2, 0.1],
            members_on_resampled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub category: AttackCategory,
    pub network: NetworkSpec,
    pub resample: ResampleConfig,
    pub loss: FocalLossParams,
    pub train: TrainConfig,
    pub ensemble: Option<EnsembleConfig>,
    pub threshold_policy: ThresholdPolicy,
    /// Fraction of the training data held out (stratified) for threshold
    /// selection and early stopping.
    pub validation_fraction: f64,
    /// Derive per-class weights from inverse class frequency (R2L).
    pub inverse_frequency_weights: bool,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.category == AttackCategory::Normal {
            return Err(Error::InvalidArgument(
                "detectors target attack categories, not Normal".to_string(),
            ));
        }
        if let Some(e) = &self.ensemble {
            let sum: f64 = e.weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "ensemble weights sum to {sum}, expected 1"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || self.validation_fraction == 0.0 {
            return Err(Error::InvalidArgument(
                "validation_fraction must be in (0, 1)".to_string(),
            ));
        }
        self.network.validate()?;
        Ok(())
    }
}

/// Network stack for a category. `width_divisor` shrinks every unit count
/// (minimum 1 filter / 2 attention key dims) so the same topology can run in
/// fast tests and gradient checks.
pub fn architecture(
    category: AttackCategory,
    input_width: usize,
    width_divisor: usize,
) -> Result<NetworkSpec> {
    let d = width_divisor.max(1);
    let u = |units: usize| (units / d).max(1);
    let conv = |filters: usize, kernel: usize| LayerSpec::Conv1D {
        filters: u(filters),
        kernel,
        padding: Padding::Valid,
        activation: Activation::Relu,
    };
    let layers = match category {
        AttackCategory::DoS => vec![
            conv(64, 3),
            conv(64, 3),
            LayerSpec::MaxPool1D { pool: 2 },
            conv(128, 3),
            conv(128, 3),
            LayerSpec::MaxPool1D { pool: 2 },
            LayerSpec::BatchNorm,
            LayerSpec::Lstm {
                units: u(100),
                dropout: 0.1,
                recurrent_dropout: 0.0,
            },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ],
        AttackCategory::Probe => vec![
            conv(64, 3),
            LayerSpec::BatchNorm,
            LayerSpec::Residual { kernel: 3 },
            LayerSpec::MaxPool1D { pool: 2 },
            LayerSpec::Dropout { rate: 0.2 },
            conv(128, 3),
            conv(128, 3),
            LayerSpec::BatchNorm,
            LayerSpec::MaxPool1D { pool: 2 },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::MultiHeadAttention {
                heads: 4,
                key_dim: u(32).max(2),
            },
            LayerSpec::BiLstm {
                fwd_units: u(64),
                bwd_units: u(32),
            },
            LayerSpec::Dense {
                units: u(128),
                activation: Activation::Relu,
            },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense {
                units: u(64),
                activation: Activation::Relu,
            },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ],
        AttackCategory::R2L => vec![
            conv(64, 3),
            LayerSpec::MaxPool1D { pool: 2 },
            conv(128, 3),
            LayerSpec::MaxPool1D { pool: 2 },
            LayerSpec::Lstm {
                units: u(100),
                dropout: 0.1,
                recurrent_dropout: 0.0,
            },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ],
        AttackCategory::U2R => vec![
            conv(32, 3),
            LayerSpec::MaxPool1D { pool: 2 },
            LayerSpec::Dropout { rate: 0.2 },
            conv(64, 3),
            LayerSpec::MaxPool1D { pool: 2 },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Lstm {
                units: u(32),
                dropout: 0.2,
                recurrent_dropout: 0.2,
            },
            LayerSpec::Dense {
                units: u(16),
                activation: Activation::Relu,
            },
            LayerSpec::Dropout { rate: 0.4 },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ],
        AttackCategory::Normal => {
            return Err(Error::InvalidArgument(
                "no architecture for Normal".to_string(),
            ))
        }
    };
    let spec = NetworkSpec {
        input_width,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Canonical per-category pipeline configuration.
pub fn build_detector_spec(
    category: AttackCategory,
    input_width: usize,
    rng_seed: u64,
) -> Result<DetectorSpec> {
    build_detector_spec_scaled(category, input_width, 1, rng_seed)
}

pub fn build_detector_spec_scaled(
    category: AttackCategory,
    input_width: usize,
    width_divisor: usize,
    rng_seed: u64,
) -> Result<DetectorSpec> {
    let network = architecture(category, input_width, width_divisor)?;
    let base_train = TrainConfig {
        rng_seed,
        ..Default::default()
    };
    let spec = match category {
        AttackCategory::DoS => DetectorSpec {
            category,
            network,
            resample: ResampleConfig::new(ResampleMethod::Smote, 1.0, rng_seed),
            loss: FocalLossParams::focal(0.25, 2.0),
            train: base_train,
            ensemble: None,
            threshold_policy: ThresholdPolicy::Fixed(0.5),
            validation_fraction: 0.1,
            inverse_frequency_weights: false,
        },
        AttackCategory::Probe => DetectorSpec {
            category,
            network,
            resample: ResampleConfig::new(ResampleMethod::Smote, 1.0, rng_seed),
            loss: FocalLossParams::focal(0.25, 2.0).with_recall_boost(2.0),
            train: base_train,
            ensemble: Some(EnsembleConfig::default()),
            threshold_policy: ThresholdPolicy::OptimizeF1,
            validation_fraction: 0.1,
            inverse_frequency_weights: false,
        },
        AttackCategory::R2L => DetectorSpec {
            category,
            network,
            resample: ResampleConfig::new(ResampleMethod::Smote, 1.0, rng_seed),
            loss: FocalLossParams::focal(0.25, 2.0),
            train: base_train,
            ensemble: None,
            threshold_policy: ThresholdPolicy::Fixed(0.5),
            validation_fraction: 0.1,
            inverse_frequency_weights: true,
        },
        AttackCategory::U2R => DetectorSpec {
            category,
            network,
            resample: ResampleConfig::new(ResampleMethod::Smote, 0.1, rng_seed),
            loss: FocalLossParams::focal(0.25, 2.0)
                .with_recall_boost(3.0)
                .with_penalty_factor(1.0),
            train: base_train,
            ensemble: Some(EnsembleConfig::default()),
            threshold_policy: ThresholdPolicy::OptimizeF1,
            validation_fraction: 0.1,
            inverse_frequency_weights: false,
        },
        AttackCategory::Normal => {
            return Err(Error::InvalidArgument(
                "detectors target attack categories, not Normal".to_string(),
            ))
        }
    };
    Ok(spec)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleMembers {
    pub forest: RandomForest,
    pub boosting: GradientBoosting,
    pub logistic: LogisticRegression,
    pub weights: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorArtifact {
    pub spec: DetectorSpec,
    pub params: Params,
    pub members: Option<EnsembleMembers>,
    pub threshold: f64,
    pub history: TrainHistory,
    /// Validation-fold metrics at the chosen threshold.
    pub validation_f1: f64,
}

/// Deterministic stratified split into (train, validation) row indices.
pub fn stratified_split(
    labels: &[u8],
    validation_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x57A7);
    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        let n_val = ((rows.len() as f64) * validation_fraction).round() as usize;
        // keep at least one sample of each class on both sides when possible
        let n_val = n_val.clamp(usize::from(rows.len() >= 2), rows.len().saturating_sub(1));
        val_rows.extend_from_slice(&rows[..n_val]);
        train_rows.extend_from_slice(&rows[n_val..]);
    }
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    (train_rows, val_rows)
}

/// Train a detector: stratified validation split, resampling on the training
/// fold only, network (+ optional classical members), then threshold
/// selection on the validation fold.
pub fn train_detector(
    spec: &DetectorSpec,
    matrix: &FeatureMatrix,
    labels: &[u8],
) -> Result<DetectorArtifact> {
    spec.validate()?;
    if matrix.n_rows != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: matrix.n_rows,
            actual: labels.len(),
            context: "detector labels".to_string(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass(format!("{} detector", spec.category)));
    }

    let (train_rows, val_rows) =
        stratified_split(labels, spec.validation_fraction, spec.train.rng_seed);
    let train_x = matrix.select_rows(&train_rows);
    let train_y: Vec<u8> = train_rows.iter().map(|&i| labels[i]).collect();
    let val_x = matrix.select_rows(&val_rows);
    let val_y: Vec<u8> = val_rows.iter().map(|&i| labels[i]).collect();

    // resampling sees only the training fold
    let resampled = resample(&train_x, &train_y, &spec.resample)?;

    let mut train_cfg = spec.train.clone();
    train_cfg.loss = spec.loss;
    if spec.inverse_frequency_weights {
        train_cfg.class_weights = Some(inverse_frequency_weights(&resampled.labels));
    }

    let outcome = train(
        &spec.network,
        &train_cfg,
        &resampled.matrix,
        &resampled.labels,
        &val_x,
        &val_y,
    )?;

    let members = match &spec.ensemble {
        Some(cfg) => {
            let (mx, my): (&FeatureMatrix, &[u8]) = if cfg.members_on_resampled {
                (&resampled.matrix, &resampled.labels)
            } else {
                (&train_x, &train_y)
            };
            Some(EnsembleMembers {
                forest: RandomForest::fit(cfg.forest, mx, my)?,
                boosting: GradientBoosting::fit(cfg.boosting, mx, my)?,
                logistic: LogisticRegression::fit(cfg.logistic, mx, my)?,
                weights: cfg.weights,
            })
        }
        None => None,
    };

    let val_probs = score_with(&spec.network, &outcome.params, members.as_ref(), &val_x)?;
    let threshold = match spec.threshold_policy {
        ThresholdPolicy::Fixed(t) => t,
        ThresholdPolicy::OptimizeF1 => optimize_threshold(&val_probs, &val_y)?,
    };
    let val_pred: Vec<u8> = val_probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    let validation_f1 = f1(&confusion(&val_pred, &val_y)?);

    Ok(DetectorArtifact {
        spec: spec.clone(),
        params: outcome.params,
        members,
        threshold,
        history: outcome.history,
        validation_f1,
    })
}

/// Inverse class frequency, normalized so the weights average to 1.
pub fn inverse_frequency_weights(labels: &[u8]) -> [f64; 2] {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = n - pos;
    let raw = [n / (2.0 * neg), n / (2.0 * pos)];
    let mean = (raw[0] + raw[1]) / 2.0;
    [raw[0] / mean, raw[1] / mean]
}

fn score_with(
    network: &NetworkSpec,
    params: &Params,
    members: Option<&EnsembleMembers>,
    matrix: &FeatureMatrix,
) -> Result<Vec<f64>> {
    let nn = predict_proba(network, params, matrix)?;
    let Some(m) = members else {
        return Ok(nn);
    };
    let rf = m.forest.predict_proba(matrix)?;
    let gb = m.boosting.predict_proba(matrix)?;
    let lr = m.logistic.predict_proba(matrix)?;
    Ok((0..matrix.n_rows)
        .map(|i| {
            m.weights[0] * nn[i] + m.weights[1] * rf[i] + m.weights[2] * gb[i] + m.weights[3] * lr[i]
        })
        .collect())
}

/// Weighted ensemble probability per row (plain network probability when the
/// detector has no classical members).
pub fn ensemble_score(artifact: &DetectorArtifact, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    score_with(
        &artifact.spec.network,
        &artifact.params,
        artifact.members.as_ref(),
        matrix,
    )
}

/// F1-maximizing threshold. Candidates are the distinct predicted
/// probabilities plus 0.5; ties break toward the lower threshold (higher
/// recall).
pub fn optimize_threshold(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            actual: labels.len(),
            context: "threshold labels".to_string(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass("threshold optimization".to_string()));
    }

    let mut candidates: Vec<f64> = probs.to_vec();
    candidates.push(0.5);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let mut best_threshold = candidates[0];
    let mut best_f1 = -1.0;
    for &t in &candidates {
        let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= t)).collect();
        let score = f1(&confusion(&pred, labels).unwrap());
        if score > best_f1 + 1e-12 {
            best_f1 = score;
            best_threshold = t;
        }
    }
    Ok(best_threshold)
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub probabilities: Vec<f64>,
    pub decisions: Vec<u8>,
}

/// Score and threshold: decision = (probability >= threshold).
pub fn detect(artifact: &DetectorArtifact, matrix: &FeatureMatrix) -> Result<Detection> {
    let probabilities = ensemble_score(artifact, matrix)?;
    let decisions = probabilities
        .iter()
        .map(|&p| u8::from(p >= artifact.threshold))
        .collect();
    Ok(Detection {
        probabilities,
        decisions,
    })
}
