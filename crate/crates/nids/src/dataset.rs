//! NSL-KDD ingestion: CSV parsing, attack-name mapping, label binarization
//! and class-distribution checks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 41 NSL-KDD feature names, in file order.
pub const FEATURE_NAMES: [&str; 41] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
];

/// Indices of the three categorical features (protocol_type, service, flag).
pub const CATEGORICAL_INDICES: [usize; 3] = [1, 2, 3];

/// Number of numeric feature columns (41 minus the 3 categorical ones).
pub const NUM_NUMERIC: usize = 38;

pub fn is_categorical(index: usize) -> bool {
    CATEGORICAL_INDICES.contains(&index)
}

/// The five NSL-KDD traffic categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackCategory {
    Normal,
    DoS,
    Probe,
    R2L,
    U2R,
}

impl AttackCategory {
    pub const ALL: [AttackCategory; 5] = [
        AttackCategory::Normal,
        AttackCategory::DoS,
        AttackCategory::Probe,
        AttackCategory::R2L,
        AttackCategory::U2R,
    ];

    /// The four attack (non-Normal) categories in canonical detector order.
    pub const ATTACKS: [AttackCategory; 4] = [
        AttackCategory::DoS,
        AttackCategory::Probe,
        AttackCategory::R2L,
        AttackCategory::U2R,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackCategory::Normal => "Normal",
            AttackCategory::DoS => "DoS",
            AttackCategory::Probe => "Probe",
            AttackCategory::R2L => "R2L",
            AttackCategory::U2R => "U2R",
        }
    }
}

impl fmt::Display for AttackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(AttackCategory::Normal),
            "dos" => Ok(AttackCategory::DoS),
            "probe" => Ok(AttackCategory::Probe),
            "r2l" => Ok(AttackCategory::R2L),
            "u2r" => Ok(AttackCategory::U2R),
            other => Err(Error::InvalidArgument(format!(
                "unknown category {other:?}"
            ))),
        }
    }
}

/// One NSL-KDD connection record: 41 feature fields kept verbatim plus the
/// attack label and difficulty score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    /// The 41 feature fields as they appeared in the file.
    pub features: Vec<String>,
    pub attack_name: String,
    pub difficulty: u32,
}

impl RawRecord {
    /// The 38 numeric feature values, in column order.
    pub fn numeric_values(&self) -> Vec<f64> {
        self.features
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_categorical(*i))
            .map(|(_, v)| v.parse::<f64>().expect("validated at parse time"))
            .collect()
    }

    pub fn categorical(&self, feature_index: usize) -> &str {
        &self.features[feature_index]
    }

    /// Re-serialize as an NSL-KDD CSV line; feature fields round-trip
    /// byte-identically.
    pub fn to_csv_line(&self) -> String {
        let mut fields: Vec<&str> = self.features.iter().map(String::as_str).collect();
        fields.push(&self.attack_name);
        let difficulty = self.difficulty.to_string();
        fields.push(&difficulty);
        fields.join(",")
    }
}

/// Which NSL-KDD split a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetSource {
    Train,
    TestPlus,
    Test21,
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetSource::Train => "train",
            DatasetSource::TestPlus => "test_plus",
            DatasetSource::Test21 => "test_21",
        };
        f.write_str(s)
    }
}

/// Parsed records with their resolved categories, order preserved.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub records: Vec<RawRecord>,
    pub categories: Vec<AttackCategory>,
    pub source: DatasetSource,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// attack_name -> category table, loaded from a `name,category` text file.
#[derive(Debug, Clone)]
pub struct AttackMapping {
    map: BTreeMap<String, AttackCategory>,
}

const BUNDLED_MAPPING: &str = include_str!("../resources/attack_mapping.txt");

impl AttackMapping {
    /// The canonical KDD taxonomy bundled with the crate.
    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_MAPPING, "<bundled>").expect("bundled mapping is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, cat) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message: "expected `attack_name,category`".to_string(),
            })?;
            let category = cat.parse::<AttackCategory>().map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
            map.insert(name.trim().to_string(), category);
        }
        if map.is_empty() {
            return Err(Error::Config(format!("mapping {origin} has no entries")));
        }
        Ok(AttackMapping { map })
    }

    pub fn lookup(&self, attack_name: &str) -> Option<AttackCategory> {
        self.map.get(attack_name).copied()
    }
}

/// Map one attack name to its category. Unmapped names are an error, never a
/// silent default.
pub fn map_attack_category(attack_name: &str, mapping: &AttackMapping) -> Result<AttackCategory> {
    mapping
        .lookup(attack_name)
        .ok_or_else(|| Error::UnknownAttack {
            names: vec![attack_name.to_string()],
        })
}

/// Parse an NSL-KDD CSV file (no header, 43 comma-separated fields per row).
pub fn parse_nslkdd(
    path: &Path,
    mapping: &AttackMapping,
    source: DatasetSource,
) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_nslkdd_text(&text, &path.display().to_string(), mapping, source)
}

pub fn parse_nslkdd_text(
    text: &str,
    origin: &str,
    mapping: &AttackMapping,
    source: DatasetSource,
) -> Result<LabeledDataset> {
    let mut records = Vec::new();
    let mut categories = Vec::new();
    let mut unknown: Vec<String> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 43 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message: format!("expected 43 fields, found {}", fields.len()),
            });
        }
        for (i, field) in fields[..41].iter().enumerate() {
            if is_categorical(i) {
                if field.is_empty() {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: lineno + 1,
                        message: format!("empty categorical field {}", FEATURE_NAMES[i]),
                    });
                }
            } else if field.parse::<f64>().map(|v| !v.is_finite()).unwrap_or(true) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    message: format!("non-numeric value {:?} in {}", field, FEATURE_NAMES[i]),
                });
            }
        }
        let attack_name = fields[41].to_string();
        let difficulty: u32 = fields[42].trim().parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message: format!("bad difficulty field {:?}", fields[42]),
        })?;
        match mapping.lookup(&attack_name) {
            Some(cat) => categories.push(cat),
            None => {
                if !unknown.contains(&attack_name) {
                    unknown.push(attack_name.clone());
                }
                continue;
            }
        }
        records.push(RawRecord {
            features: fields[..41].iter().map(|s| s.to_string()).collect(),
            attack_name,
            difficulty,
        });
    }

    if !unknown.is_empty() {
        return Err(Error::UnknownAttack { names: unknown });
    }
    if records.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: "file contains no records".to_string(),
        });
    }
    Ok(LabeledDataset {
        records,
        categories,
        source,
    })
}

/// 1 iff the record's category equals `target`, else 0. `target` must be an
/// attack category.
pub fn binarize_labels(dataset: &LabeledDataset, target: AttackCategory) -> Result<Vec<u8>> {
    if target == AttackCategory::Normal {
        return Err(Error::InvalidArgument(
            "binarize_labels target must be an attack category".to_string(),
        ));
    }
    Ok(dataset
        .categories
        .iter()
        .map(|&c| u8::from(c == target))
        .collect())
}

/// 1 for any attack, 0 for Normal — the meta-classifier's target.
pub fn anomaly_labels(dataset: &LabeledDataset) -> Vec<u8> {
    dataset
        .categories
        .iter()
        .map(|&c| u8::from(c != AttackCategory::Normal))
        .collect()
}

/// Per-category counts and percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub total: usize,
    /// Counts indexed as AttackCategory::ALL.
    pub counts: [usize; 5],
}

impl ClassDistribution {
    pub fn count(&self, category: AttackCategory) -> usize {
        let idx = AttackCategory::ALL
            .iter()
            .position(|&c| c == category)
            .unwrap();
        self.counts[idx]
    }

    pub fn percentage(&self, category: AttackCategory) -> f64 {
        100.0 * self.count(category) as f64 / self.total as f64
    }
}

pub fn class_distribution(dataset: &LabeledDataset) -> ClassDistribution {
    let mut counts = [0usize; 5];
    for &c in &dataset.categories {
        let idx = AttackCategory::ALL.iter().position(|&x| x == c).unwrap();
        counts[idx] += 1;
    }
    ClassDistribution {
        total: dataset.len(),
        counts,
    }
}

/// Reference counts for ingest validation (training split per the published
/// class distribution; test splits by their published totals).
pub mod expected {
    pub const TRAIN_COUNTS: [(super::AttackCategory, usize); 5] = [
        (super::AttackCategory::Normal, 67_342),
        (super::AttackCategory::DoS, 45_927),
        (super::AttackCategory::Probe, 11_656),
        (super::AttackCategory::R2L, 995),
        (super::AttackCategory::U2R, 52),
    ];
    pub const TEST_PLUS_TOTAL: usize = 22_544;
    pub const TEST_21_TOTAL: usize = 11_850;
}
