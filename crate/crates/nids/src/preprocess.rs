//! Encoding and scaling pipeline: union-vocabulary one-hot encoding of the
//! three categorical features, then standardization fitted on training data
//! only. Train and test matrices always share one column layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{is_categorical, LabeledDataset, CATEGORICAL_INDICES, FEATURE_NAMES};
use crate::error::{Error, Result};

/// Sorted, duplicate-free category lists for protocol_type, service and flag,
/// taken from the union of train and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    /// Parallel to CATEGORICAL_INDICES.
    pub categories: [Vec<String>; 3],
}

impl CategoryVocabulary {
    pub fn for_feature(&self, feature_index: usize) -> &[String] {
        let slot = CATEGORICAL_INDICES
            .iter()
            .position(|&i| i == feature_index)
            .expect("feature is categorical");
        &self.categories[slot]
    }
}

/// Per-column standardization parameters, population (divide-by-N) variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Which split the scaler was fitted on.
    pub fitted_on: String,
    /// True: population (divide-by-N) standard deviation.
    pub population: bool,
}

/// Dense row-major feature matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub column_names: Vec<String>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, column_names: Vec<String>, n_rows: usize) -> Self {
        let n_cols = column_names.len();
        assert_eq!(values.len(), n_rows * n_cols);
        FeatureMatrix {
            values,
            column_names,
            n_rows,
            n_cols,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_cols + c]
    }

    /// Copy of the selected rows, same columns.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix::new(values, self.column_names.clone(), rows.len())
    }

    pub fn assert_finite(&self) -> Result<()> {
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {} col {}",
                pos / self.n_cols,
                pos % self.n_cols
            )));
        }
        Ok(())
    }
}

/// Union vocabulary over both splits, lexicographically ordered per feature.
pub fn build_vocabulary(train: &LabeledDataset, test: &LabeledDataset) -> CategoryVocabulary {
    let mut categories: [Vec<String>; 3] = Default::default();
    for (slot, &fi) in CATEGORICAL_INDICES.iter().enumerate() {
        let mut values: Vec<String> = train
            .records
            .iter()
            .chain(test.records.iter())
            .map(|r| r.categorical(fi).to_string())
            .collect();
        values.sort();
        values.dedup();
        categories[slot] = values;
    }
    CategoryVocabulary { categories }
}

/// Column names of the encoded matrix for a given vocabulary: numeric columns
/// keep their schema name, each categorical feature expands in place to
/// `feature=value` indicators.
pub fn encoded_column_names(vocab: &CategoryVocabulary) -> Vec<String> {
    let mut names = Vec::new();
    for (i, &name) in FEATURE_NAMES.iter().enumerate() {
        if is_categorical(i) {
            for value in vocab.for_feature(i) {
                names.push(format!("{name}={value}"));
            }
        } else {
            names.push(name.to_string());
        }
    }
    names
}

/// One-hot encode the categorical features and pass numeric features through.
/// The attack label and difficulty never enter the matrix.
pub fn one_hot_encode(dataset: &LabeledDataset, vocab: &CategoryVocabulary) -> Result<FeatureMatrix> {
    let column_names = encoded_column_names(vocab);
    let n_cols = column_names.len();
    let mut values = Vec::with_capacity(dataset.len() * n_cols);

    for record in &dataset.records {
        for (i, field) in record.features.iter().enumerate() {
            if is_categorical(i) {
                let cats = vocab.for_feature(i);
                let hit = cats.iter().position(|c| c == field);
                match hit {
                    Some(pos) => {
                        for j in 0..cats.len() {
                            values.push(if j == pos { 1.0 } else { 0.0 });
                        }
                    }
                    None => {
                        return Err(Error::OutOfVocabulary {
                            feature: FEATURE_NAMES[i].to_string(),
                            value: field.clone(),
                        })
                    }
                }
            } else {
                values.push(field.parse::<f64>().expect("validated at parse time"));
            }
        }
    }
    let matrix = FeatureMatrix::new(values, column_names, dataset.len());
    matrix.assert_finite()?;
    Ok(matrix)
}

/// Fit per-column mean and population standard deviation on a training matrix.
pub fn fit_scaler(train_matrix: &FeatureMatrix, fitted_on: &str) -> Result<ScalerParams> {
    if train_matrix.n_rows < 2 {
        return Err(Error::InvalidArgument(
            "scaler requires at least 2 rows".to_string(),
        ));
    }
    let n = train_matrix.n_rows as f64;
    let mut means = vec![0.0; train_matrix.n_cols];
    for r in 0..train_matrix.n_rows {
        for (c, v) in train_matrix.row(r).iter().enumerate() {
            means[c] += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut vars = vec![0.0; train_matrix.n_cols];
    for r in 0..train_matrix.n_rows {
        for (c, v) in train_matrix.row(r).iter().enumerate() {
            let d = v - means[c];
            vars[c] += d * d;
        }
    }
    let stds = vars.iter().map(|v| (v / n).sqrt()).collect();
    Ok(ScalerParams {
        means,
        stds,
        fitted_on: fitted_on.to_string(),
        population: true,
    })
}

/// Standardize each column as (x − mean)/std; zero-variance columns map to 0.
pub fn apply_scaler(matrix: &FeatureMatrix, params: &ScalerParams) -> Result<FeatureMatrix> {
    if matrix.n_cols != params.means.len() {
        return Err(Error::DimensionMismatch {
            expected: params.means.len(),
            actual: matrix.n_cols,
            context: "apply_scaler columns".to_string(),
        });
    }
    let mut values = Vec::with_capacity(matrix.values.len());
    for r in 0..matrix.n_rows {
        for (c, v) in matrix.row(r).iter().enumerate() {
            let std = params.stds[c];
            values.push(if std > 0.0 { (v - params.means[c]) / std } else { 0.0 });
        }
    }
    let out = FeatureMatrix::new(values, matrix.column_names.clone(), matrix.n_rows);
    out.assert_finite()?;
    Ok(out)
}

/// Versioned sidecar holding the fitted pipeline state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSidecar {
    pub version: u32,
    pub vocabulary: CategoryVocabulary,
    pub column_names: Vec<String>,
    pub scaler: ScalerParams,
}

pub const SIDECAR_VERSION: u32 = 1;

impl PreprocessSidecar {
    pub fn new(vocabulary: CategoryVocabulary, scaler: ScalerParams) -> Self {
        let column_names = encoded_column_names(&vocabulary);
        PreprocessSidecar {
            version: SIDECAR_VERSION,
            vocabulary,
            column_names,
            scaler,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Artifact(format!("sidecar encode: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let sidecar: PreprocessSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Artifact(format!("sidecar decode: {e}")))?;
        if sidecar.version != SIDECAR_VERSION {
            return Err(Error::Artifact(format!(
                "sidecar version {} unsupported (expected {})",
                sidecar.version, SIDECAR_VERSION
            )));
        }
        Ok(sidecar)
    }
}
