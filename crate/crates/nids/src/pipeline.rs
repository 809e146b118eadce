//! End-to-end orchestration behind the CLI: dataset loading, preprocessing
//! sidecar management, fast-mode subsampling, training stages with manifest
//! bookkeeping, evaluation reports, and the row-scoring path.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::artifact;
use crate::config::ExperimentConfig;
use crate::dataset::{
    anomaly_labels, binarize_labels, class_distribution, expected, is_categorical, parse_nslkdd,
    AttackCategory, AttackMapping, DatasetSource, LabeledDataset, FEATURE_NAMES,
};
use crate::detectors::{ensemble_score, DetectorArtifact};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvaluationReport};
use crate::meta::{
    assemble_meta, oof_meta_features, predict_anomaly, train_final_detector, MetaSystem,
    META_FEATURE_ORDER,
};
use crate::preprocess::{
    apply_scaler, build_vocabulary, fit_scaler, one_hot_encode, FeatureMatrix, PreprocessSidecar,
};

/// Artifact file names inside `artifacts.dir`.
pub fn detector_path(dir: &Path, category: AttackCategory) -> PathBuf {
    dir.join(format!(
        "detector.{}.nids",
        category.as_str().to_ascii_lowercase()
    ))
}

pub fn detector_kind(category: AttackCategory) -> String {
    format!("detector.{}", category.as_str().to_ascii_lowercase())
}

pub fn meta_path(dir: &Path) -> PathBuf {
    dir.join("meta_system.nids")
}

pub const META_KIND: &str = "meta_system";

pub fn sidecar_path(dir: &Path) -> PathBuf {
    dir.join("preprocess.json")
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}

fn load_mapping(config: &ExperimentConfig) -> Result<AttackMapping> {
    match config.optional_path("data.mapping") {
        Some(path) => AttackMapping::from_path(&path),
        None => Ok(AttackMapping::bundled()),
    }
}

fn load_split(
    config: &ExperimentConfig,
    key: &str,
    source: DatasetSource,
) -> Result<LabeledDataset> {
    let path = config.path(key)?;
    let mapping = load_mapping(config)?;
    parse_nslkdd(&path, &mapping, source)
}

pub fn load_train(config: &ExperimentConfig) -> Result<LabeledDataset> {
    load_split(config, "data.train", DatasetSource::Train)
}

pub fn load_test(config: &ExperimentConfig, source: DatasetSource) -> Result<LabeledDataset> {
    match source {
        DatasetSource::TestPlus => load_split(config, "data.test_plus", DatasetSource::TestPlus),
        DatasetSource::Test21 => load_split(config, "data.test_21", DatasetSource::Test21),
        DatasetSource::Train => load_train(config),
    }
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug)]
pub struct IngestReport {
    /// Rendered distribution tables for standard output.
    pub text: String,
    /// Human-readable descriptions of deviations from the expected counts.
    pub deviations: Vec<String>,
}

fn render_distribution(dataset: &LabeledDataset, origin: &str, out: &mut String) {
    use std::fmt::Write as _;
    let dist = class_distribution(dataset);
    let _ = writeln!(out, "{origin} ({} records)", dataset.len());
    let _ = writeln!(out, "  {:<10}{:>10}{:>10}", "Category", "Count", "Percent");
    for cat in AttackCategory::ALL {
        let _ = writeln!(
            out,
            "  {:<10}{:>10}{:>9.2}%",
            cat.as_str(),
            dist.count(cat),
            dist.percentage(cat)
        );
    }
}

/// Parse every configured split, print its class distribution, and compare
/// against the bundled expected counts. Deviations are reported, not fatal;
/// the caller decides the exit status.
pub fn cmd_ingest(config: &ExperimentConfig) -> Result<IngestReport> {
    let mut text = String::new();
    let mut deviations = Vec::new();

    let train = load_train(config)?;
    render_distribution(&train, "train", &mut text);
    let dist = class_distribution(&train);
    for (cat, want) in expected::TRAIN_COUNTS {
        let got = dist.count(cat);
        if got != want {
            deviations.push(format!("train {}: {} records, expected {}", cat.as_str(), got, want));
        }
    }

    for (key, source, total) in [
        ("data.test_plus", DatasetSource::TestPlus, expected::TEST_PLUS_TOTAL),
        ("data.test_21", DatasetSource::Test21, expected::TEST_21_TOTAL),
    ] {
        if config.optional_path(key).is_none() {
            continue;
        }
        let test = load_test(config, source)?;
        render_distribution(&test, &source.to_string(), &mut text);
        if test.len() != total {
            deviations.push(format!("{source}: {} records, expected {total}", test.len()));
        }
    }

    for d in &deviations {
        use std::fmt::Write as _;
        let _ = writeln!(text, "DEVIATION: {d}");
    }
    Ok(IngestReport { text, deviations })
}

// ---------------------------------------------------------------------------
// preprocessing sidecar

/// Load the sidecar if present; otherwise fit it (union vocabulary over every
/// configured split, scaler on train only) and persist it.
pub fn build_or_load_sidecar(
    config: &ExperimentConfig,
    train: &LabeledDataset,
) -> Result<PreprocessSidecar> {
    let dir = config.artifact_dir()?;
    let path = sidecar_path(&dir);
    if path.exists() {
        return PreprocessSidecar::load(&path);
    }

    // the vocabulary must cover the test splits so their encodings exist
    let mut union_records = Vec::new();
    for (key, source) in [
        ("data.test_plus", DatasetSource::TestPlus),
        ("data.test_21", DatasetSource::Test21),
    ] {
        if config.optional_path(key).is_some() {
            union_records.extend(load_test(config, source)?.records);
        }
    }
    let n = union_records.len();
    let union = LabeledDataset {
        records: union_records,
        categories: vec![AttackCategory::Normal; n],
        source: DatasetSource::TestPlus,
    };
    let vocab = if union.is_empty() {
        build_vocabulary(train, train)
    } else {
        build_vocabulary(train, &union)
    };

    let raw = one_hot_encode(train, &vocab)?;
    let scaler = fit_scaler(&raw, &DatasetSource::Train.to_string())?;
    let sidecar = PreprocessSidecar::new(vocab, scaler);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    sidecar.save(&path)?;
    Ok(sidecar)
}

/// Encode and scale a dataset with a fitted sidecar.
pub fn encode(sidecar: &PreprocessSidecar, dataset: &LabeledDataset) -> Result<FeatureMatrix> {
    let raw = one_hot_encode(dataset, &sidecar.vocabulary)?;
    if raw.column_names != sidecar.column_names {
        return Err(Error::Artifact(
            "encoded columns do not match the preprocessing sidecar".to_string(),
        ));
    }
    apply_scaler(&raw, &sidecar.scaler)
}

/// Stratified fast-mode subsample: per category, a deterministic shuffle then
/// the first ceil(fraction * n) rows, floored at 8 (or the whole category if
/// smaller) so oversampling still has neighbors to work with. Returns sorted
/// row indices.
pub fn fast_subsample(categories: &[AttackCategory], fraction: f64, seed: u64) -> Vec<usize> {
    const MIN_PER_CATEGORY: usize = 8;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xFA57);
    let mut keep = Vec::new();
    for cat in AttackCategory::ALL {
        let mut rows: Vec<usize> = (0..categories.len())
            .filter(|&i| categories[i] == cat)
            .collect();
        rows.shuffle(&mut rng);
        let n = ((rows.len() as f64) * fraction).ceil() as usize;
        let n = n.max(MIN_PER_CATEGORY.min(rows.len()));
        keep.extend_from_slice(&rows[..n]);
    }
    keep.sort_unstable();
    keep
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    Detector(AttackCategory),
    Meta,
    All,
}

impl std::str::FromStr for TrainScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dos" => Ok(TrainScope::Detector(AttackCategory::DoS)),
            "probe" => Ok(TrainScope::Detector(AttackCategory::Probe)),
            "r2l" => Ok(TrainScope::Detector(AttackCategory::R2L)),
            "u2r" => Ok(TrainScope::Detector(AttackCategory::U2R)),
            "meta" => Ok(TrainScope::Meta),
            "all" => Ok(TrainScope::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown scope {other:?}; expected dos, probe, r2l, u2r, meta or all"
            ))),
        }
    }
}

impl fmt::Display for TrainScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainScope::Detector(c) => write!(f, "{}", c.as_str().to_ascii_lowercase()),
            TrainScope::Meta => f.write_str("meta"),
            TrainScope::All => f.write_str("all"),
        }
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    /// (stage name, wall seconds), in execution order.
    pub stages: Vec<(String, f64)>,
    pub manifest_path: PathBuf,
}

fn in_stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Artifact(format!("stage {name} failed: {e}")))
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Train the requested scope. Detector stages train on target + Normal rows
/// of the (possibly subsampled) training split and persist one artifact each.
/// The meta stage requires all four detector artifacts, rebuilds out-of-fold
/// stacking features from the config's specs, and persists the fused system.
pub fn cmd_train(config: &ExperimentConfig, scope: TrainScope) -> Result<TrainSummary> {
    let dir = config.artifact_dir()?;
    let digest = config.digest();
    let seed = config.seed()?;

    let train = load_train(config)?;
    let sidecar = build_or_load_sidecar(config, &train)?;
    let full_matrix = encode(&sidecar, &train)?;
    let (matrix, categories) = match config.fast_fraction()? {
        Some(fraction) => {
            let rows = fast_subsample(&train.categories, fraction, seed);
            let cats = rows.iter().map(|&r| train.categories[r]).collect();
            (full_matrix.select_rows(&rows), cats)
        }
        None => (full_matrix, train.categories.clone()),
    };
    let width = sidecar.column_names.len();

    let detector_scopes: Vec<AttackCategory> = match scope {
        TrainScope::Detector(c) => vec![c],
        TrainScope::Meta => vec![],
        TrainScope::All => META_FEATURE_ORDER.to_vec(),
    };

    let mut stages = Vec::new();
    for category in detector_scopes {
        let stage = detector_kind(category);
        let started = Instant::now();
        let spec = in_stage(&stage, config.detector_spec(category, width))?;
        let artifact = in_stage(&stage, train_final_detector(&spec, &matrix, &categories))?;
        in_stage(
            &stage,
            artifact::save(&detector_path(&dir, category), &stage, &digest, &artifact),
        )?;
        stages.push((stage, started.elapsed().as_secs_f64()));
    }

    if matches!(scope, TrainScope::Meta | TrainScope::All) {
        let stage = "meta";
        let started = Instant::now();
        let mut detectors = Vec::with_capacity(4);
        for category in META_FEATURE_ORDER {
            let path = detector_path(&dir, category);
            if !path.exists() {
                return Err(Error::Artifact(format!(
                    "missing detector artifact {}; train the detectors first (e.g. train --scope all)",
                    path.display()
                )));
            }
            detectors.push(in_stage(
                stage,
                artifact::load_expected::<DetectorArtifact>(
                    &path,
                    &detector_kind(category),
                    &digest,
                ),
            )?);
        }
        let specs = in_stage(stage, config.detector_specs(width))?;
        let meta_config = in_stage(stage, config.meta_config())?;
        let (oof, folds) = in_stage(
            stage,
            oof_meta_features(&specs, &matrix, &categories, &meta_config),
        )?;
        let system = in_stage(
            stage,
            assemble_meta(detectors, &oof, &categories, folds, &meta_config),
        )?;
        in_stage(
            stage,
            artifact::save(&meta_path(&dir), META_KIND, &digest, &system),
        )?;
        stages.push((stage.to_string(), started.elapsed().as_secs_f64()));
    }

    let mut manifest = format!("config_digest = {digest}\nseed = {seed}\n");
    for (name, seconds) in &stages {
        use std::fmt::Write as _;
        let _ = writeln!(manifest, "stage.{name}.seconds = {seconds:.3}");
    }
    let manifest_file = manifest_path(&dir);
    atomic_write(&manifest_file, manifest.as_bytes())?;

    Ok(TrainSummary {
        stages,
        manifest_path: manifest_file,
    })
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    Detector(AttackCategory),
    Meta,
}

impl std::str::FromStr for EvalTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dos" => Ok(EvalTarget::Detector(AttackCategory::DoS)),
            "probe" => Ok(EvalTarget::Detector(AttackCategory::Probe)),
            "r2l" => Ok(EvalTarget::Detector(AttackCategory::R2L)),
            "u2r" => Ok(EvalTarget::Detector(AttackCategory::U2R)),
            "meta" => Ok(EvalTarget::Meta),
            other => Err(Error::InvalidArgument(format!(
                "unknown target {other:?}; expected dos, probe, r2l, u2r or meta"
            ))),
        }
    }
}

impl fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalTarget::Detector(c) => write!(f, "{}", c.as_str().to_ascii_lowercase()),
            EvalTarget::Meta => f.write_str("meta"),
        }
    }
}

fn json_digest<T: serde::Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    format!("{:x}", Sha256::digest(&bytes))
}

#[derive(Debug)]
pub struct EvalOutput {
    pub report: EvaluationReport,
    pub text_path: PathBuf,
    pub json_path: PathBuf,
    pub confusion_path: PathBuf,
}

/// Evaluate one detector (target-vs-all labels) or the meta system (anomaly
/// labels) on a test split and write the text / JSON / confusion-grid files.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    source: DatasetSource,
    target: EvalTarget,
) -> Result<EvalOutput> {
    let dir = config.artifact_dir()?;
    let digest = config.digest();
    let sidecar = PreprocessSidecar::load(&sidecar_path(&dir)).map_err(|e| {
        Error::Artifact(format!("{e}; run train before evaluate"))
    })?;
    let dataset = load_test(config, source)?;
    let matrix = encode(&sidecar, &dataset)?;

    let (probs, labels, threshold, model_digest) = match target {
        EvalTarget::Detector(category) => {
            let artifact: DetectorArtifact = artifact::load_expected(
                &detector_path(&dir, category),
                &detector_kind(category),
                &digest,
            )?;
            let probs = ensemble_score(&artifact, &matrix)?;
            let labels = binarize_labels(&dataset, category)?;
            (probs, labels, artifact.threshold, json_digest(&artifact))
        }
        EvalTarget::Meta => {
            let system: MetaSystem = artifact::load_expected(&meta_path(&dir), META_KIND, &digest)?;
            let prediction = predict_anomaly(&system, &matrix)?;
            (
                prediction.probabilities,
                anomaly_labels(&dataset),
                0.5,
                json_digest(&system),
            )
        }
    };

    let report = evaluate(&probs, &labels, threshold, &source.to_string(), &model_digest)?;
    let stem = format!("report.{target}.{source}");
    let text_path = dir.join(format!("{stem}.txt"));
    let json_path = dir.join(format!("{stem}.json"));
    let confusion_path = dir.join(format!("{stem}.confusion.csv"));
    atomic_write(&text_path, report.render_text().as_bytes())?;
    report.save_json(&json_path)?;
    report.save_confusion_grid(&confusion_path)?;
    Ok(EvalOutput {
        report,
        text_path,
        json_path,
        confusion_path,
    })
}

// ---------------------------------------------------------------------------
// score

pub const SCORE_HEADER: &str = "row_index,p_dos,p_probe,p_r2l,p_u2r,anomaly_prob,decision";

#[derive(Debug)]
pub struct ScoreSummary {
    /// The emitted verdict stream, header first. Empty input yields an empty
    /// stream.
    pub lines: Vec<String>,
    /// (input row index, reason) for rows that could not be scored.
    pub malformed: Vec<(usize, String)>,
}

/// Encode one raw 41-field row against the sidecar, or explain why it can't
/// be. Accepts 43-field labeled rows and ignores the trailing two fields.
fn encode_row(fields: &[&str], sidecar: &PreprocessSidecar) -> std::result::Result<Vec<f64>, String> {
    let features = match fields.len() {
        41 => fields,
        43 => &fields[..41],
        n => return Err(format!("expected 41 or 43 fields, found {n}")),
    };
    let mut row = Vec::with_capacity(sidecar.column_names.len());
    for (i, field) in features.iter().enumerate() {
        if is_categorical(i) {
            let cats = sidecar.vocabulary.for_feature(i);
            let Some(pos) = cats.iter().position(|c| c == field) else {
                return Err(format!(
                    "out-of-vocabulary value {field:?} for {}",
                    FEATURE_NAMES[i]
                ));
            };
            for j in 0..cats.len() {
                row.push(if j == pos { 1.0 } else { 0.0 });
            }
        } else {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(format!(
                        "non-numeric value {field:?} in {}",
                        FEATURE_NAMES[i]
                    ))
                }
            }
        }
    }
    Ok(row)
}

/// Score raw NSL-KDD rows with the persisted meta system. Malformed rows are
/// reported and skipped; valid rows are scored in input order.
pub fn cmd_score(config: &ExperimentConfig, input: &Path) -> Result<ScoreSummary> {
    let dir = config.artifact_dir()?;
    let digest = config.digest();
    let sidecar = PreprocessSidecar::load(&sidecar_path(&dir)).map_err(|e| {
        Error::Artifact(format!("{e}; run train before score"))
    })?;
    let system: MetaSystem = artifact::load_expected(&meta_path(&dir), META_KIND, &digest)?;

    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let mut malformed = Vec::new();
    let mut row_indices = Vec::new();
    let mut values = Vec::new();
    let mut seen = 0usize;
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let fields: Vec<&str> = line.split(',').collect();
        match encode_row(&fields, &sidecar) {
            Ok(row) => {
                row_indices.push(index);
                values.extend(row);
            }
            Err(reason) => malformed.push((index, reason)),
        }
    }

    let mut lines = Vec::new();
    if seen > 0 {
        lines.push(SCORE_HEADER.to_string());
    }
    if !row_indices.is_empty() {
        let raw = FeatureMatrix::new(values, sidecar.column_names.clone(), row_indices.len());
        let matrix = apply_scaler(&raw, &sidecar.scaler)?;
        let prediction = predict_anomaly(&system, &matrix)?;
        for (j, &index) in row_indices.iter().enumerate() {
            let f = &prediction.meta_features;
            lines.push(format!(
                "{index},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                f.get(j, 0),
                f.get(j, 1),
                f.get(j, 2),
                f.get(j, 3),
                prediction.probabilities[j],
                prediction.decisions[j]
            ));
        }
    }
    Ok(ScoreSummary { lines, malformed })
}
