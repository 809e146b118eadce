//! Minority-class oversampling over standardized feature vectors: SMOTE,
//! ADASYN and BorderlineSMOTE. All three interpolate between a minority
//! sample and one of its k nearest minority neighbors; they differ in how
//! generation effort is allocated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResampleMethod {
    Smote,
    Adasyn,
    BorderlineSmote,
    None,
}

impl std::str::FromStr for ResampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "smote" => Ok(ResampleMethod::Smote),
            "adasyn" => Ok(ResampleMethod::Adasyn),
            "borderline" | "borderline_smote" | "borderlinesmote" => {
                Ok(ResampleMethod::BorderlineSmote)
            }
            "none" => Ok(ResampleMethod::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown resample method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub method: ResampleMethod,
    pub k_neighbors: usize,
    /// Desired minority/majority ratio after resampling, in (0, 1].
    pub target_ratio: f64,
    pub rng_seed: u64,
}

impl ResampleConfig {
    pub fn new(method: ResampleMethod, target_ratio: f64, rng_seed: u64) -> Self {
        ResampleConfig {
            method,
            k_neighbors: 5,
            target_ratio,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResampleOutput {
    pub matrix: FeatureMatrix,
    pub labels: Vec<u8>,
    pub n_synthetic: usize,
    pub warnings: Vec<String>,
}

/// Dispatch on the configured method. `ResampleMethod::None` returns the
/// input unchanged.
pub fn resample(
    matrix: &FeatureMatrix,
    labels: &[u8],
    cfg: &ResampleConfig,
) -> Result<ResampleOutput> {
    match cfg.method {
        ResampleMethod::Smote => smote(matrix, labels, cfg),
        ResampleMethod::Adasyn => adasyn(matrix, labels, cfg),
        ResampleMethod::BorderlineSmote => borderline_smote(matrix, labels, cfg),
        ResampleMethod::None => Ok(ResampleOutput {
            matrix: matrix.clone(),
            labels: labels.to_vec(),
            n_synthetic: 0,
            warnings: Vec::new(),
        }),
    }
}

pub fn smote(matrix: &FeatureMatrix, labels: &[u8], cfg: &ResampleConfig) -> Result<ResampleOutput> {
    let ctx = Context::build(matrix, labels, cfg)?;
    let n_syn = ctx.synthetic_count();
    let per_seed = uniform_allocation(ctx.minority.len(), n_syn);
    ctx.generate(&per_seed, Vec::new())
}

pub fn adasyn(matrix: &FeatureMatrix, labels: &[u8], cfg: &ResampleConfig) -> Result<ResampleOutput> {
    let ctx = Context::build(matrix, labels, cfg)?;
    let n_syn = ctx.synthetic_count();

    // density weight: fraction of majority samples among the k nearest
    // neighbors over the whole dataset
    let weights: Vec<f64> = ctx
        .minority
        .iter()
        .map(|&i| {
            let nn = ctx.knn_all(i);
            nn.iter().filter(|&&j| labels[j] == 0).count() as f64 / nn.len() as f64
        })
        .collect();
    let total: f64 = weights.iter().sum();

    let mut warnings = Vec::new();
    let per_seed = if total == 0.0 {
        warnings.push(
            "adasyn: all minority neighborhoods are purely minority; falling back to uniform SMOTE allocation"
                .to_string(),
        );
        uniform_allocation(ctx.minority.len(), n_syn)
    } else {
        largest_remainder_allocation(&weights, total, n_syn)
    };
    ctx.generate(&per_seed, warnings)
}

pub fn borderline_smote(
    matrix: &FeatureMatrix,
    labels: &[u8],
    cfg: &ResampleConfig,
) -> Result<ResampleOutput> {
    let ctx = Context::build(matrix, labels, cfg)?;
    let n_syn = ctx.synthetic_count();

    // danger: at least half but not all of the k-neighborhood is majority
    let half = (cfg.k_neighbors + 1) / 2;
    let danger: Vec<usize> = (0..ctx.minority.len())
        .filter(|&mi| {
            let nn = ctx.knn_all(ctx.minority[mi]);
            let maj = nn.iter().filter(|&&j| labels[j] == 0).count();
            maj >= half && maj < nn.len()
        })
        .collect();

    if danger.is_empty() {
        return Ok(ResampleOutput {
            matrix: matrix.clone(),
            labels: labels.to_vec(),
            n_synthetic: 0,
            warnings: vec![
                "borderline_smote: no danger-classified minority samples; returning input unchanged"
                    .to_string(),
            ],
        });
    }

    let mut per_seed = vec![0usize; ctx.minority.len()];
    for (rank, &mi) in danger.iter().enumerate() {
        per_seed[mi] = n_syn / danger.len() + usize::from(rank < n_syn % danger.len());
    }
    ctx.generate(&per_seed, Vec::new())
}

/// Classification of a minority sample's k-neighborhood, exposed for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BorderlineClass {
    Safe,
    Danger,
    Noise,
}

pub fn borderline_classify(
    matrix: &FeatureMatrix,
    labels: &[u8],
    cfg: &ResampleConfig,
    row: usize,
) -> Result<BorderlineClass> {
    let ctx = Context::build(matrix, labels, cfg)?;
    let nn = ctx.knn_all(row);
    let maj = nn.iter().filter(|&&j| labels[j] == 0).count();
    let half = (cfg.k_neighbors + 1) / 2;
    Ok(if maj == nn.len() {
        BorderlineClass::Noise
    } else if maj >= half {
        BorderlineClass::Danger
    } else {
        BorderlineClass::Safe
    })
}

struct Context<'a> {
    matrix: &'a FeatureMatrix,
    labels: &'a [u8],
    cfg: &'a ResampleConfig,
    minority: Vec<usize>,
    n_majority: usize,
}

impl<'a> Context<'a> {
    fn build(matrix: &'a FeatureMatrix, labels: &'a [u8], cfg: &'a ResampleConfig) -> Result<Self> {
        if matrix.n_rows != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: matrix.n_rows,
                actual: labels.len(),
                context: "resample labels".to_string(),
            });
        }
        if cfg.k_neighbors == 0 {
            return Err(Error::Resample("k_neighbors must be positive".to_string()));
        }
        if !(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0) {
            return Err(Error::Resample(format!(
                "target_ratio {} outside (0, 1]",
                cfg.target_ratio
            )));
        }
        let minority: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let n_majority = labels.len() - minority.len();
        if minority.len() < cfg.k_neighbors + 1 {
            return Err(Error::Resample(format!(
                "minority class has {} samples but k_neighbors={} requires at least {}; lower k",
                minority.len(),
                cfg.k_neighbors,
                cfg.k_neighbors + 1
            )));
        }
        Ok(Context {
            matrix,
            labels,
            cfg,
            minority,
            n_majority,
        })
    }

    fn synthetic_count(&self) -> usize {
        let want = (self.cfg.target_ratio * self.n_majority as f64).ceil() as usize;
        want.saturating_sub(self.minority.len())
    }

    fn dist2(&self, a: usize, b: usize) -> f64 {
        self.matrix
            .row(a)
            .iter()
            .zip(self.matrix.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }

    /// k nearest neighbors of `row` over all samples, self excluded; ties
    /// break by lower row index.
    fn knn_all(&self, row: usize) -> Vec<usize> {
        self.knn_from(row, None)
    }

    /// k nearest minority neighbors of `row`, self excluded.
    fn knn_minority(&self, row: usize) -> Vec<usize> {
        self.knn_from(row, Some(1))
    }

    fn knn_from(&self, row: usize, label_filter: Option<u8>) -> Vec<usize> {
        let mut candidates: Vec<(f64, usize)> = (0..self.matrix.n_rows)
            .filter(|&j| j != row && label_filter.map_or(true, |l| self.labels[j] == l))
            .map(|j| (self.dist2(row, j), j))
            .collect();
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        candidates
            .into_iter()
            .take(self.cfg.k_neighbors)
            .map(|(_, j)| j)
            .collect()
    }

    /// Append `per_seed[i]` synthetics for minority sample i, interpolating
    /// toward one of its k nearest minority neighbors.
    fn generate(&self, per_seed: &[usize], warnings: Vec<String>) -> Result<ResampleOutput> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.cfg.rng_seed);
        let mut values = self.matrix.values.clone();
        let mut labels = self.labels.to_vec();
        let mut n_synthetic = 0usize;

        for (mi, &count) in per_seed.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let seed_row = self.minority[mi];
            let neighbors = self.knn_minority(seed_row);
            for _ in 0..count {
                let nn = neighbors[rng.gen_range(0..neighbors.len())];
                let lambda: f64 = rng.gen_range(0.0..=1.0);
                let base = self.matrix.row(seed_row);
                let other = self.matrix.row(nn);
                for (x, y) in base.iter().zip(other) {
                    values.push(x + lambda * (y - x));
                }
                labels.push(1);
                n_synthetic += 1;
            }
        }

        let matrix = FeatureMatrix::new(
            values,
            self.matrix.column_names.clone(),
            self.matrix.n_rows + n_synthetic,
        );
        matrix.assert_finite()?;
        Ok(ResampleOutput {
            matrix,
            labels,
            n_synthetic,
            warnings,
        })
    }
}

fn uniform_allocation(n_seeds: usize, n_syn: usize) -> Vec<usize> {
    (0..n_seeds)
        .map(|i| n_syn / n_seeds + usize::from(i < n_syn % n_seeds))
        .collect()
}

fn largest_remainder_allocation(weights: &[f64], total: f64, n_syn: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n_syn as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // biggest fractional part first; ties by lower index
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n_syn - assigned) {
        alloc[i] += 1;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_2d(points: &[(f64, f64)]) -> FeatureMatrix {
        let values: Vec<f64> = points.iter().flat_map(|&(x, y)| [x, y]).collect();
        FeatureMatrix::new(values, vec!["x".to_string(), "y".to_string()], points.len())
    }

    fn cfg(method: ResampleMethod, k: usize, ratio: f64, seed: u64) -> ResampleConfig {
        ResampleConfig {
            method,
            k_neighbors: k,
            target_ratio: ratio,
            rng_seed: seed,
        }
    }

    #[test]
    fn identical_minority_points_synthesize_themselves() {
        let mut pts = vec![(3.0, 4.0), (3.0, 4.0)];
        let mut labels = vec![1u8, 1];
        for i in 0..10 {
            pts.push((10.0 + i as f64, -5.0));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let out = smote(&m, &labels, &cfg(ResampleMethod::Smote, 1, 1.0, 7)).unwrap();
        assert!(out.n_synthetic > 0);
        for r in m.n_rows..out.matrix.n_rows {
            assert_eq!(out.matrix.row(r), &[3.0, 4.0]);
            assert_eq!(out.labels[r], 1);
        }
    }

    #[test]
    fn synthetics_lie_on_the_segment() {
        let mut pts = vec![(0.0, 0.0), (1.0, 1.0)];
        let mut labels = vec![1u8, 1];
        for i in 0..8 {
            pts.push((5.0, i as f64));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let out = smote(&m, &labels, &cfg(ResampleMethod::Smote, 1, 1.0, 3)).unwrap();
        for r in m.n_rows..out.matrix.n_rows {
            let row = out.matrix.row(r);
            assert!((row[0] - row[1]).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&row[0]));
        }
    }

    #[test]
    fn originals_preserved_and_seed_reproducible() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            pts.push((i as f64 * 0.3, (i * i) as f64 * 0.1));
            labels.push(1u8);
        }
        for i in 0..14 {
            pts.push((4.0 + i as f64 * 0.2, 3.0 - i as f64 * 0.1));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let c = cfg(ResampleMethod::Smote, 3, 1.0, 42);
        let a = smote(&m, &labels, &c).unwrap();
        let b = smote(&m, &labels, &c).unwrap();
        assert_eq!(a.matrix.values, b.matrix.values);
        assert_eq!(&a.matrix.values[..m.values.len()], m.values.as_slice());
        let other = smote(&m, &labels, &cfg(ResampleMethod::Smote, 3, 1.0, 43)).unwrap();
        assert_eq!(a.matrix.n_rows, other.matrix.n_rows);
    }

    #[test]
    fn k_too_large_errors() {
        let pts = vec![(0.0, 0.0), (1.0, 1.0), (5.0, 5.0), (6.0, 6.0)];
        let labels = vec![1u8, 1, 0, 0];
        let m = matrix_2d(&pts);
        let err = smote(&m, &labels, &cfg(ResampleMethod::Smote, 5, 1.0, 1)).unwrap_err();
        assert!(err.to_string().contains("lower k"));
    }

    #[test]
    fn adasyn_allocates_to_majority_surrounded_point() {
        // minority point at origin surrounded by majority; second minority
        // cluster far away surrounded by its own kind
        let mut pts = vec![(0.0, 0.0)];
        let mut labels = vec![1u8];
        for i in 0..3 {
            pts.push((0.1 + 0.01 * i as f64, 0.0));
            labels.push(0);
        }
        for i in 0..4 {
            pts.push((100.0 + 0.01 * i as f64, 100.0));
            labels.push(1);
        }
        for i in 0..10 {
            pts.push((50.0, i as f64));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let c = cfg(ResampleMethod::Adasyn, 3, 1.0, 9);
        let out = adasyn(&m, &labels, &c).unwrap();
        assert!(out.n_synthetic > 0);
        // the isolated origin point has an all-majority neighborhood; the far
        // cluster is all-minority, so all synthetics interpolate from origin
        // toward its minority neighbors (the far cluster)
        for r in m.n_rows..out.matrix.n_rows {
            let row = out.matrix.row(r);
            // on the segment from (0,0) toward (~100,100): x ~= y
            assert!((row[0] - row[1]).abs() < 1.0);
        }
    }

    #[test]
    fn adasyn_pure_minority_neighborhoods_fall_back() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            pts.push((i as f64 * 0.01, 0.0));
            labels.push(1u8);
        }
        for i in 0..12 {
            pts.push((1000.0 + i as f64, 0.0));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let out = adasyn(&m, &labels, &cfg(ResampleMethod::Adasyn, 3, 1.0, 5)).unwrap();
        assert!(!out.warnings.is_empty());
        assert!(out.n_synthetic > 0);
    }

    #[test]
    fn borderline_noise_point_seeds_nothing() {
        // minority cluster, plus an isolated minority point fully surrounded
        // by majority
        let mut pts = vec![(100.0, 100.0)];
        let mut labels = vec![1u8];
        for i in 0..5 {
            pts.push((100.1 + 0.01 * i as f64, 100.0));
            labels.push(0);
        }
        for i in 0..6 {
            pts.push((i as f64 * 0.01, 0.0));
            labels.push(1);
        }
        for i in 0..10 {
            pts.push((30.0, i as f64));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let c = cfg(ResampleMethod::BorderlineSmote, 5, 1.0, 11);
        assert_eq!(
            borderline_classify(&m, &labels, &c, 0).unwrap(),
            BorderlineClass::Noise
        );
        let out = borderline_smote(&m, &labels, &c).unwrap();
        // nothing interpolates from the noise point at (100,100): every
        // synthetic stays near the safe/danger cluster or between clusters
        for r in m.n_rows..out.matrix.n_rows {
            assert!(out.matrix.row(r)[1] < 50.0);
        }
    }

    #[test]
    fn borderline_danger_point_detected() {
        // minority point with 3 of 5 neighbors majority
        let pts = vec![
            (0.0, 0.0),  // the probe point (minority)
            (0.1, 0.0),  // majority
            (0.0, 0.1),  // majority
            (-0.1, 0.0), // majority
            (0.0, -0.1), // minority
            (0.1, 0.1),  // minority
            (9.0, 9.0),
            (9.1, 9.0),
            (9.0, 9.1),
            (8.9, 9.0),
            (9.0, 8.9),
            (9.1, 9.1),
            (9.05, 9.05),
        ];
        let labels = vec![1u8, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1];
        let m = matrix_2d(&pts);
        let c = cfg(ResampleMethod::BorderlineSmote, 5, 1.0, 2);
        assert_eq!(
            borderline_classify(&m, &labels, &c, 0).unwrap(),
            BorderlineClass::Danger
        );
        let out = borderline_smote(&m, &labels, &c).unwrap();
        assert!(out.n_synthetic > 0);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn borderline_no_danger_returns_unchanged() {
        // clean separation: every minority neighborhood is mostly minority
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            pts.push((i as f64 * 0.01, 0.0));
            labels.push(1u8);
        }
        for i in 0..16 {
            pts.push((1000.0 + i as f64, 0.0));
            labels.push(0);
        }
        let m = matrix_2d(&pts);
        let out =
            borderline_smote(&m, &labels, &cfg(ResampleMethod::BorderlineSmote, 5, 1.0, 3)).unwrap();
        assert_eq!(out.n_synthetic, 0);
        assert_eq!(out.matrix.values, m.values);
        assert!(!out.warnings.is_empty());
    }
}
