//! Meta-classifier: a Random Forest over the four detector probabilities
//! that makes the final anomaly decision. Its training features are produced
//! out-of-fold (k-fold stacking) so the forest never sees in-sample detector
//! outputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::{RandomForest, RandomForestConfig};
use crate::dataset::AttackCategory;
use crate::detectors::{ensemble_score, train_detector, DetectorArtifact, DetectorSpec};
use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

/// Canonical detector order for the 4-vector.
pub const META_FEATURE_ORDER: [AttackCategory; 4] = AttackCategory::ATTACKS;

pub fn meta_feature_names() -> Vec<String> {
    META_FEATURE_ORDER
        .iter()
        .map(|c| format!("p_{}", c.as_str().to_ascii_lowercase()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub k_folds: usize,
    pub forest: RandomForestConfig,
    pub rng_seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            k_folds: 5,
            forest: RandomForestConfig::default(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaArtifact {
    pub forest: RandomForest,
    /// Digests of the four detector artifacts the forest was paired with,
    /// canonical order.
    pub detector_digests: Vec<String>,
    /// Fold index per training row (stacking bookkeeping).
    pub fold_assignments: Vec<usize>,
}

/// The full two-level system: final detectors plus the fused meta forest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaSystem {
    /// Canonical order (DoS, Probe, R2L, U2R), trained on the full data.
    pub detectors: Vec<DetectorArtifact>,
    pub meta: MetaArtifact,
}

/// Provenance digest over a detector artifact's serialized state.
pub fn artifact_digest(artifact: &DetectorArtifact) -> String {
    let bytes = serde_json::to_vec(artifact).expect("artifact serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("{:x}", hasher.finalize())
}

/// The 4-vector of detector probabilities per row, canonical order.
pub fn build_meta_features(
    detectors: &[DetectorArtifact],
    matrix: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    check_detector_order(detectors)?;
    let mut columns = Vec::with_capacity(4);
    for artifact in detectors {
        columns.push(ensemble_score(artifact, matrix)?);
    }
    let mut values = Vec::with_capacity(matrix.n_rows * 4);
    for r in 0..matrix.n_rows {
        for col in &columns {
            let p = col[r];
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite detector probability at row {r}"
                )));
            }
            values.push(p);
        }
    }
    Ok(FeatureMatrix::new(values, meta_feature_names(), matrix.n_rows))
}

fn check_detector_order(detectors: &[DetectorArtifact]) -> Result<()> {
    if detectors.len() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            actual: detectors.len(),
            context: "detector set".to_string(),
        });
    }
    for (artifact, expected) in detectors.iter().zip(META_FEATURE_ORDER) {
        if artifact.spec.category != expected {
            return Err(Error::InvalidArgument(format!(
                "detector order must be canonical; found {} where {} was expected",
                artifact.spec.category, expected
            )));
        }
    }
    Ok(())
}

/// Stratified k-fold assignment: rows of each category are shuffled and dealt
/// round-robin, so every fold sees every category when counts allow.
pub fn stratified_folds(categories: &[AttackCategory], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xF01D);
    let mut assignment = vec![0usize; categories.len()];
    for cat in AttackCategory::ALL {
        let mut rows: Vec<usize> = (0..categories.len())
            .filter(|&i| categories[i] == cat)
            .collect();
        rows.shuffle(&mut rng);
        for (j, &r) in rows.iter().enumerate() {
            assignment[r] = j % k;
        }
    }
    assignment
}

/// Out-of-fold meta features: each row's 4-vector comes from detector
/// instances trained on the other folds. Returns the features and the fold
/// assignment used.
pub fn oof_meta_features(
    specs: &[DetectorSpec],
    matrix: &FeatureMatrix,
    categories: &[AttackCategory],
    config: &MetaConfig,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if specs.len() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            actual: specs.len(),
            context: "detector specs".to_string(),
        });
    }
    for (spec, expected) in specs.iter().zip(META_FEATURE_ORDER) {
        if spec.category != expected {
            return Err(Error::InvalidArgument(format!(
                "spec order must be canonical; found {} where {} was expected",
                spec.category, expected
            )));
        }
    }
    if matrix.n_rows != categories.len() {
        return Err(Error::DimensionMismatch {
            expected: matrix.n_rows,
            actual: categories.len(),
            context: "meta labels".to_string(),
        });
    }
    if config.k_folds < 2 {
        return Err(Error::InvalidArgument("k_folds must be at least 2".to_string()));
    }

    let folds = stratified_folds(categories, config.k_folds, config.rng_seed);
    let mut oof = vec![0.0f64; matrix.n_rows * 4];
    for fold in 0..config.k_folds {
        let held_out: Vec<usize> = (0..matrix.n_rows).filter(|&i| folds[i] == fold).collect();
        if held_out.is_empty() {
            continue;
        }
        let held_matrix = matrix.select_rows(&held_out);
        for (ci, spec) in specs.iter().enumerate() {
            let target = META_FEATURE_ORDER[ci];
            // detector training set: target and Normal rows of the other folds
            let sub_rows: Vec<usize> = (0..matrix.n_rows)
                .filter(|&i| {
                    folds[i] != fold
                        && (categories[i] == target || categories[i] == AttackCategory::Normal)
                })
                .collect();
            let sub_y: Vec<u8> = sub_rows
                .iter()
                .map(|&i| u8::from(categories[i] == target))
                .collect();
            if sub_y.iter().all(|&y| y == 0) || sub_y.iter().all(|&y| y == 1) {
                return Err(Error::SingleClass(format!(
                    "{target} detector in stacking fold {fold}; try another stratification seed"
                )));
            }
            let fold_artifact = train_detector(spec, &matrix.select_rows(&sub_rows), &sub_y)?;
            let probs = ensemble_score(&fold_artifact, &held_matrix)?;
            for (j, &r) in held_out.iter().enumerate() {
                oof[r * 4 + ci] = probs[j];
            }
        }
    }
    Ok((
        FeatureMatrix::new(oof, meta_feature_names(), matrix.n_rows),
        folds,
    ))
}

/// Train a full-data detector for one category: target and Normal rows only,
/// target-vs-Normal labels.
pub fn train_final_detector(
    spec: &DetectorSpec,
    matrix: &FeatureMatrix,
    categories: &[AttackCategory],
) -> Result<DetectorArtifact> {
    let target = spec.category;
    let sub_rows: Vec<usize> = (0..matrix.n_rows)
        .filter(|&i| categories[i] == target || categories[i] == AttackCategory::Normal)
        .collect();
    let sub_y: Vec<u8> = sub_rows
        .iter()
        .map(|&i| u8::from(categories[i] == target))
        .collect();
    train_detector(spec, &matrix.select_rows(&sub_rows), &sub_y)
}

/// Fit the meta forest on out-of-fold features and pair it with a set of
/// already-trained full-data detectors (canonical order).
pub fn assemble_meta(
    detectors: Vec<DetectorArtifact>,
    oof_features: &FeatureMatrix,
    categories: &[AttackCategory],
    fold_assignments: Vec<usize>,
    config: &MetaConfig,
) -> Result<MetaSystem> {
    check_detector_order(&detectors)?;
    let anomaly: Vec<u8> = categories
        .iter()
        .map(|&c| u8::from(c != AttackCategory::Normal))
        .collect();
    let forest = RandomForest::fit(config.forest, oof_features, &anomaly)?;
    let detector_digests = detectors.iter().map(artifact_digest).collect();
    Ok(MetaSystem {
        detectors,
        meta: MetaArtifact {
            forest,
            detector_digests,
            fold_assignments,
        },
    })
}

/// Train the stacked system end to end. Out-of-fold detector probabilities
/// feed the forest; the returned detectors are retrained on the full data.
pub fn train_meta(
    specs: &[DetectorSpec],
    matrix: &FeatureMatrix,
    categories: &[AttackCategory],
    config: &MetaConfig,
) -> Result<MetaSystem> {
    let (oof_features, folds) = oof_meta_features(specs, matrix, categories, config)?;
    let detectors = specs
        .iter()
        .map(|spec| train_final_detector(spec, matrix, categories))
        .collect::<Result<Vec<_>>>()?;
    assemble_meta(detectors, &oof_features, categories, folds, config)
}

#[derive(Debug, Clone)]
pub struct AnomalyPrediction {
    pub probabilities: Vec<f64>,
    /// 1 = anomaly; decided at 0.5.
    pub decisions: Vec<u8>,
    pub meta_features: FeatureMatrix,
}

/// Final decision: forest probability over the 4-vector, thresholded at 0.5.
/// Fails when the supplied detectors do not match the forest's provenance.
pub fn predict_anomaly(system: &MetaSystem, matrix: &FeatureMatrix) -> Result<AnomalyPrediction> {
    let digests: Vec<String> = system.detectors.iter().map(artifact_digest).collect();
    if digests != system.meta.detector_digests {
        return Err(Error::Artifact(
            "detector provenance digests do not match the meta artifact".to_string(),
        ));
    }
    let meta_features = build_meta_features(&system.detectors, matrix)?;
    let probabilities = system.meta.forest.predict_proba(&meta_features)?;
    let decisions = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok(AnomalyPrediction {
        probabilities,
        decisions,
        meta_features,
    })
}
