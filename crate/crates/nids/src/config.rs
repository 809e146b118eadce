//! Experiment configuration: a flat text format of dotted `key = value`
//! lines. Every run parameter is explicit (notably the seed); the digest of
//! the effective config is stamped into every artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dataset::AttackCategory;
use crate::detectors::{DetectorSpec, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::resample::ResampleMethod;

/// Keys the parser accepts. Anything else is rejected so typos surface
/// immediately.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "fast.fraction",
    "data.train",
    "data.test_plus",
    "data.test_21",
    "data.mapping",
    "artifacts.dir",
    "meta.k_folds",
    "meta.forest.n_trees",
    "meta.forest.max_depth",
];

const CATEGORY_KEYS: &[&str] = &[
    "resample.method",
    "resample.k_neighbors",
    "resample.target_ratio",
    "loss.alpha",
    "loss.gamma",
    "loss.recall_boost",
    "loss.penalty_factor",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "threshold_policy",
    "ensemble.enabled",
    "width_divisor",
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

fn category_prefix(cat: AttackCategory) -> &'static str {
    match cat {
        AttackCategory::DoS => "dos",
        AttackCategory::Probe => "probe",
        AttackCategory::R2L => "r2l",
        AttackCategory::U2R => "u2r",
        AttackCategory::Normal => "normal",
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !Self::key_is_known(&key) {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
        }
        let config = ExperimentConfig { entries };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    fn key_is_known(key: &str) -> bool {
        if KNOWN_KEYS.contains(&key) {
            return true;
        }
        for cat in AttackCategory::ATTACKS {
            let prefix = category_prefix(cat);
            if let Some(rest) = key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                return CATEGORY_KEYS.contains(&rest);
            }
        }
        false
    }

    fn validate(&self) -> Result<()> {
        if !self.entries.contains_key("seed") {
            return Err(Error::Config(
                "seed is required; no implicit entropy".to_string(),
            ));
        }
        self.seed()?;
        if let Some(f) = self.get_f64("fast.fraction")? {
            if !(0.0 < f && f <= 1.0) {
                return Err(Error::Config("fast.fraction must be in (0, 1]".to_string()));
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !Self::key_is_known(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("{key}: not a number: {v:?}")))
            })
            .transpose()
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: not an integer: {v:?}")))
            })
            .transpose()
    }

    pub fn seed(&self) -> Result<u64> {
        let v = self.get("seed").expect("validated");
        v.parse::<u64>()
            .map_err(|_| Error::Config(format!("seed: not an integer: {v:?}")))
    }

    pub fn fast_fraction(&self) -> Result<Option<f64>> {
        self.get_f64("fast.fraction")
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("{key} is not set")))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn artifact_dir(&self) -> Result<PathBuf> {
        self.path("artifacts.dir")
    }

    pub fn meta_config(&self) -> Result<MetaConfig> {
        let mut cfg = MetaConfig {
            rng_seed: self.seed()?,
            ..Default::default()
        };
        if let Some(k) = self.get_usize("meta.k_folds")? {
            cfg.k_folds = k;
        }
        if let Some(n) = self.get_usize("meta.forest.n_trees")? {
            cfg.forest.n_trees = n;
        }
        if let Some(d) = self.get_usize("meta.forest.max_depth")? {
            cfg.forest.max_depth = d;
        }
        cfg.forest.rng_seed = cfg.rng_seed;
        Ok(cfg)
    }

    /// Detector spec for a category with config overrides applied.
    pub fn detector_spec(&self, category: AttackCategory, input_width: usize) -> Result<DetectorSpec> {
        let prefix = category_prefix(category);
        let key = |suffix: &str| format!("{prefix}.{suffix}");

        let divisor = self.get_usize(&key("width_divisor"))?.unwrap_or(1);
        let mut spec = crate::detectors::build_detector_spec_scaled(
            category,
            input_width,
            divisor,
            self.seed()?,
        )?;

        if let Some(m) = self.get(&key("resample.method")) {
            spec.resample.method = m.parse::<ResampleMethod>()?;
        }
        if let Some(k) = self.get_usize(&key("resample.k_neighbors"))? {
            spec.resample.k_neighbors = k;
        }
        if let Some(r) = self.get_f64(&key("resample.target_ratio"))? {
            spec.resample.target_ratio = r;
        }
        if let Some(a) = self.get_f64(&key("loss.alpha"))? {
            spec.loss.alpha = a;
        }
        if let Some(g) = self.get_f64(&key("loss.gamma"))? {
            spec.loss.gamma = g;
        }
        if let Some(b) = self.get_f64(&key("loss.recall_boost"))? {
            spec.loss.recall_boost = b;
        }
        if let Some(p) = self.get_f64(&key("loss.penalty_factor"))? {
            spec.loss.penalty_factor = p;
        }
        if let Some(e) = self.get_usize(&key("train.epochs"))? {
            spec.train.epochs = e;
        }
        if let Some(b) = self.get_usize(&key("train.batch_size"))? {
            spec.train.batch_size = b;
        }
        if let Some(lr) = self.get_f64(&key("train.learning_rate"))? {
            spec.train.adam.learning_rate = lr;
        }
        if let Some(policy) = self.get(&key("threshold_policy")) {
            spec.threshold_policy = parse_threshold_policy(policy)?;
        }
        if let Some(flag) = self.get(&key("ensemble.enabled")) {
            match flag {
                "true" => {
                    if spec.ensemble.is_none() {
                        spec.ensemble = Some(Default::default());
                    }
                }
                "false" => spec.ensemble = None,
                other => {
                    return Err(Error::Config(format!(
                        "{}: expected true or false, got {other:?}",
                        key("ensemble.enabled")
                    )))
                }
            }
        }
        Ok(spec)
    }

    /// All four detector specs in canonical order.
    pub fn detector_specs(&self, input_width: usize) -> Result<Vec<DetectorSpec>> {
        AttackCategory::ATTACKS
            .iter()
            .map(|&c| self.detector_spec(c, input_width))
            .collect()
    }

    /// Canonical rendering: sorted `key = value` lines.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical rendering.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

fn parse_threshold_policy(s: &str) -> Result<ThresholdPolicy> {
    if s == "optimize_f1" {
        return Ok(ThresholdPolicy::OptimizeF1);
    }
    if let Some(v) = s.strip_prefix("fixed:") {
        let t = v
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("threshold_policy: bad fixed value {v:?}")))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(
                "threshold_policy: fixed value must be in [0, 1]".to_string(),
            ));
        }
        return Ok(ThresholdPolicy::Fixed(t));
    }
    Err(Error::Config(format!(
        "threshold_policy: expected optimize_f1 or fixed:<t>, got {s:?}"
    )))
}
