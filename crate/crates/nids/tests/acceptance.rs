//! Acceptance gate: one test per criterion, each printing a pass line.
//! Criteria 1–7 are the property-based suite and run here; criteria 8–14
//! need the real NSL-KDD files and live in the `full_scale` suite.

mod common;

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use nids::dataset::{
    is_categorical, parse_nslkdd_text, AttackCategory, AttackMapping, DatasetSource,
    CATEGORICAL_INDICES, FEATURE_NAMES,
};
use nids::detectors::{architecture, optimize_threshold};
use nids::evaluation::{accuracy, confusion, f1, precision, pr_curve, recall, roc_auc};
use nids::neural::loss::{focal_loss, focal_loss_grad, PROB_EPSILON};
use nids::neural::{
    gradcheck, init_params, input_tensor, Activation, FocalLossParams, LayerSpec, Mode,
    NetworkSpec, Padding,
};
use nids::preprocess::{build_vocabulary, one_hot_encode, FeatureMatrix};
use nids::resample::{adasyn, borderline_smote, smote, ResampleConfig, ResampleMethod};

use common::synthetic_nslkdd;

fn pass(n: usize, what: &str) {
    println!("criterion {n} ({what}): PASS");
}

// ---------------------------------------------------------------------------
// criterion 1: gradient checks

fn random_matrix(n: usize, width: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let names = (0..width).map(|i| format!("f{i}")).collect();
    FeatureMatrix::new(values, names, n)
}

fn max_grad_error(spec: &NetworkSpec, seed: u64) -> f64 {
    spec.validate().unwrap();
    let params = init_params(spec, seed).unwrap();
    let n = 3;
    let matrix = random_matrix(n, spec.input_width, seed ^ 0xABCD);
    let rows: Vec<usize> = (0..n).collect();
    let input = input_tensor(&matrix, &rows);
    let labels = vec![1u8, 0, 1];
    let report = gradcheck::check(
        spec,
        &params,
        &input,
        &labels,
        &FocalLossParams::focal(0.25, 2.0),
        Mode::Train { step_seed: 9 },
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn criterion_1_gradient_checks() {
    let dense1 = LayerSpec::Dense {
        units: 1,
        activation: Activation::Sigmoid,
    };
    let lstm_head = LayerSpec::Lstm {
        units: 4,
        dropout: 0.0,
        recurrent_dropout: 0.0,
    };
    let conv = |filters: usize, padding: Padding| LayerSpec::Conv1D {
        filters,
        kernel: 3,
        padding,
        activation: Activation::Relu,
    };

    // every layer kind, each embedded in a minimal stack
    let stacks: Vec<(&str, usize, Vec<LayerSpec>)> = vec![
        (
            "dense",
            5,
            vec![
                LayerSpec::Lstm {
                    units: 3,
                    dropout: 0.0,
                    recurrent_dropout: 0.0,
                },
                LayerSpec::Dense {
                    units: 4,
                    activation: Activation::Relu,
                },
                dense1.clone(),
            ],
        ),
        (
            "conv_valid",
            8,
            vec![conv(3, Padding::Valid), lstm_head.clone(), dense1.clone()],
        ),
        (
            "conv_same",
            8,
            vec![conv(3, Padding::Same), lstm_head.clone(), dense1.clone()],
        ),
        (
            "maxpool",
            9,
            vec![
                conv(3, Padding::Valid),
                LayerSpec::MaxPool1D { pool: 2 },
                lstm_head.clone(),
                dense1.clone(),
            ],
        ),
        (
            "batchnorm",
            8,
            vec![
                conv(3, Padding::Valid),
                LayerSpec::BatchNorm,
                lstm_head.clone(),
                dense1.clone(),
            ],
        ),
        (
            "dropout",
            8,
            vec![
                conv(3, Padding::Valid),
                LayerSpec::Dropout { rate: 0.3 },
                lstm_head.clone(),
                dense1.clone(),
            ],
        ),
        (
            "lstm_with_dropouts",
            7,
            vec![
                LayerSpec::Lstm {
                    units: 4,
                    dropout: 0.2,
                    recurrent_dropout: 0.2,
                },
                dense1.clone(),
            ],
        ),
        (
            "bilstm",
            7,
            vec![
                LayerSpec::BiLstm {
                    fwd_units: 3,
                    bwd_units: 2,
                },
                dense1.clone(),
            ],
        ),
        (
            "attention",
            6,
            vec![
                LayerSpec::MultiHeadAttention {
                    heads: 2,
                    key_dim: 3,
                },
                lstm_head.clone(),
                dense1.clone(),
            ],
        ),
        (
            "residual",
            8,
            vec![
                conv(3, Padding::Valid),
                LayerSpec::Residual { kernel: 3 },
                lstm_head.clone(),
                dense1.clone(),
            ],
        ),
    ];
    for (name, width, layers) in stacks {
        let spec = NetworkSpec {
            input_width: width,
            layers,
        };
        let err = max_grad_error(&spec, 41);
        assert!(err < 1e-4, "{name}: max relative error {err:.3e}");
    }

    // the four reduced-width detector architectures
    for (category, width) in [
        (AttackCategory::DoS, 16),
        (AttackCategory::Probe, 24),
        (AttackCategory::R2L, 16),
        (AttackCategory::U2R, 16),
    ] {
        let spec = architecture(category, width, 16).unwrap();
        let err = max_grad_error(&spec, 17);
        assert!(err < 1e-4, "{category}: max relative error {err:.3e}");
    }
    pass(1, "gradient checks");
}

// ---------------------------------------------------------------------------
// criterion 2: metric oracles

fn random_labeled_probs(rng: &mut ChaCha20Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let quantize = rng.gen_bool(0.5);
        let probs: Vec<f64> = (0..n)
            .map(|_| {
                let p: f64 = rng.gen();
                if quantize {
                    (p * 10.0).round() / 10.0
                } else {
                    p
                }
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        let pos = labels.iter().filter(|&&y| y == 1).count();
        if pos > 0 && pos < n {
            return (probs, labels);
        }
    }
}

#[test]
fn criterion_2_metric_oracles() {
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    for _ in 0..1000 {
        let n = rng.gen_range(6..=30);
        let (probs, labels) = random_labeled_probs(&mut rng, n);
        let decisions: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();

        // confusion counts, counted by hand
        let mut counts = [0usize; 4]; // tp, fp, tn, fn
        for (&d, &y) in decisions.iter().zip(&labels) {
            match (d, y) {
                (1, 1) => counts[0] += 1,
                (1, 0) => counts[1] += 1,
                (0, 0) => counts[2] += 1,
                (0, 1) => counts[3] += 1,
                _ => unreachable!(),
            }
        }
        let cm = confusion(&decisions, &labels).unwrap();
        assert_eq!([cm.tp, cm.fp, cm.tn, cm.fn_], counts);

        let [tp, fp, tn, fn_] = counts.map(|c| c as f64);
        let prec_o = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let rec_o = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1_o = if prec_o + rec_o == 0.0 {
            0.0
        } else {
            2.0 * prec_o * rec_o / (prec_o + rec_o)
        };
        let acc_o = (tp + tn) / n as f64;
        assert!((precision(&cm) - prec_o).abs() < 1e-12);
        assert!((recall(&cm) - rec_o).abs() < 1e-12);
        assert!((f1(&cm) - f1_o).abs() < 1e-12);
        assert!((accuracy(&cm) - acc_o).abs() < 1e-12);

        // ROC-AUC against the pairwise (Mann-Whitney) statistic
        let mut numer = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1.0;
                if probs[i] > probs[j] {
                    numer += 1.0;
                } else if probs[i] == probs[j] {
                    numer += 0.5;
                }
            }
        }
        let (auc, _) = roc_auc(&probs, &labels).unwrap();
        assert!((auc - numer / pairs).abs() < 1e-9, "auc {auc} vs {}", numer / pairs);

        // PR curve point by point
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let points = pr_curve(&probs, &labels).unwrap();
        let mut expected_thresholds: Vec<f64> = probs.clone();
        expected_thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        expected_thresholds.dedup();
        assert_eq!(points.len(), expected_thresholds.len());
        for ((rec, prec, thr), want_thr) in points.iter().zip(&expected_thresholds) {
            assert_eq!(thr, want_thr);
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (&p, &y) in probs.iter().zip(&labels) {
                if p >= *thr {
                    if y == 1 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let want_prec = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            assert!((prec - want_prec).abs() < 1e-12);
            assert!((rec - tp / n_pos).abs() < 1e-12);
        }
    }
    pass(2, "metric oracles");
}

// ---------------------------------------------------------------------------
// criterion 3: oversampling geometry

fn dist2(m: &FeatureMatrix, a: usize, b: usize) -> f64 {
    m.row(a)
        .iter()
        .zip(m.row(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// k nearest neighbors of `row`, optionally restricted by label; ties break
/// by lower index.
fn oracle_knn(
    m: &FeatureMatrix,
    labels: &[u8],
    row: usize,
    k: usize,
    filter: Option<u8>,
) -> Vec<usize> {
    let mut candidates: Vec<(f64, usize)> = (0..m.n_rows)
        .filter(|&j| j != row && filter.map_or(true, |l| labels[j] == l))
        .map(|j| (dist2(m, row, j), j))
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    candidates.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Is s = a + lambda (b - a) for a single lambda in [0, 1], coordinate-wise
/// within 1e-9?
fn segment_consistent(s: &[f64], a: &[f64], b: &[f64]) -> bool {
    let mut pivot = None;
    let mut span = 1e-12;
    for i in 0..a.len() {
        let d = (b[i] - a[i]).abs();
        if d > span {
            span = d;
            pivot = Some(i);
        }
    }
    match pivot {
        None => s.iter().zip(a).all(|(x, y)| (x - y).abs() <= 1e-9),
        Some(i) => {
            let lambda = (s[i] - a[i]) / (b[i] - a[i]);
            if !(-1e-9..=1.0 + 1e-9).contains(&lambda) {
                return false;
            }
            s.iter()
                .zip(a.iter().zip(b))
                .all(|(si, (ai, bi))| (si - (ai + lambda * (bi - ai))).abs() <= 1e-9)
        }
    }
}

fn largest_remainder(weights: &[f64], total: f64, n_syn: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n_syn as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
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

fn random_instance(rng: &mut ChaCha20Rng, k: usize) -> (FeatureMatrix, Vec<u8>) {
    let dims = rng.gen_range(2..=5);
    let n_min = rng.gen_range(k + 1..=k + 6);
    let n_maj = rng.gen_range(n_min + 2..=n_min + 15);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_min + n_maj {
        for _ in 0..dims {
            values.push(rng.gen_range(0.0..10.0));
        }
        labels.push(u8::from(i < n_min));
    }
    let names = (0..dims).map(|d| format!("x{d}")).collect();
    (FeatureMatrix::new(values, names, n_min + n_maj), labels)
}

#[test]
fn criterion_3_oversampling_geometry() {
    let mut rng = ChaCha20Rng::seed_from_u64(303);
    for method in [
        ResampleMethod::Smote,
        ResampleMethod::Adasyn,
        ResampleMethod::BorderlineSmote,
    ] {
        for round in 0..200 {
            let k = rng.gen_range(1..=4);
            let (m, labels) = random_instance(&mut rng, k);
            let cfg = ResampleConfig {
                method,
                k_neighbors: k,
                target_ratio: rng.gen_range(0.5..1.0),
                rng_seed: rng.gen(),
            };
            let minority: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == 1).collect();
            let n_maj = labels.len() - minority.len();
            let n_syn = ((cfg.target_ratio * n_maj as f64).ceil() as usize)
                .saturating_sub(minority.len());

            // per-seed allocation oracle
            let uniform = |n: usize| -> Vec<usize> {
                (0..minority.len())
                    .map(|i| n / minority.len() + usize::from(i < n % minority.len()))
                    .collect()
            };
            let alloc: Vec<usize> = match method {
                ResampleMethod::Smote => uniform(n_syn),
                ResampleMethod::Adasyn => {
                    let weights: Vec<f64> = minority
                        .iter()
                        .map(|&i| {
                            let nn = oracle_knn(&m, &labels, i, k, None);
                            nn.iter().filter(|&&j| labels[j] == 0).count() as f64
                                / nn.len() as f64
                        })
                        .collect();
                    let total: f64 = weights.iter().sum();
                    if total == 0.0 {
                        uniform(n_syn)
                    } else {
                        largest_remainder(&weights, total, n_syn)
                    }
                }
                ResampleMethod::BorderlineSmote => {
                    let half = (k + 1) / 2;
                    let danger: Vec<usize> = (0..minority.len())
                        .filter(|&mi| {
                            let nn = oracle_knn(&m, &labels, minority[mi], k, None);
                            let maj = nn.iter().filter(|&&j| labels[j] == 0).count();
                            maj >= half && maj < nn.len()
                        })
                        .collect();
                    let mut alloc = vec![0usize; minority.len()];
                    if danger.is_empty() {
                        alloc
                    } else {
                        for (rank, &mi) in danger.iter().enumerate() {
                            alloc[mi] =
                                n_syn / danger.len() + usize::from(rank < n_syn % danger.len());
                        }
                        alloc
                    }
                }
                ResampleMethod::None => unreachable!(),
            };

            let out = match method {
                ResampleMethod::Smote => smote(&m, &labels, &cfg),
                ResampleMethod::Adasyn => adasyn(&m, &labels, &cfg),
                ResampleMethod::BorderlineSmote => borderline_smote(&m, &labels, &cfg),
                ResampleMethod::None => unreachable!(),
            }
            .unwrap();

            // originals retained verbatim, synthetics labeled 1
            assert_eq!(&out.matrix.values[..m.values.len()], m.values.as_slice());
            assert_eq!(&out.labels[..labels.len()], labels.as_slice());
            assert!(out.labels[labels.len()..].iter().all(|&y| y == 1));
            assert_eq!(
                out.n_synthetic,
                alloc.iter().sum::<usize>(),
                "{method:?} round {round}: allocation total"
            );

            // synthetics appear grouped per seed in minority order; each must
            // be a convex combination of its seed and one of the seed's k
            // nearest minority neighbors
            let mut cursor = m.n_rows;
            for (mi, &count) in alloc.iter().enumerate() {
                let seed_row = minority[mi];
                let neighbors = oracle_knn(&m, &labels, seed_row, k, Some(1));
                for _ in 0..count {
                    let s = out.matrix.row(cursor);
                    let ok = neighbors
                        .iter()
                        .any(|&nn| segment_consistent(s, m.row(seed_row), m.row(nn)));
                    assert!(
                        ok,
                        "{method:?} round {round}: synthetic row {cursor} is not on a segment from minority seed {seed_row}"
                    );
                    cursor += 1;
                }
            }
            assert_eq!(cursor, out.matrix.n_rows);
        }
    }
    pass(3, "oversampling geometry");
}

// ---------------------------------------------------------------------------
// criterion 4: focal-loss degeneracy

#[test]
fn criterion_4_focal_degeneracy() {
    let params = FocalLossParams::cross_entropy();
    let mut rng = ChaCha20Rng::seed_from_u64(404);
    for i in 0..10_000 {
        let p: f64 = match i % 10 {
            0 => 0.0,
            1 => 1.0,
            2 => 0.5,
            _ => rng.gen(),
        };
        let y = u8::from(rng.gen_bool(0.5));
        let pc = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        let bce = -(f64::from(y) * pc.ln() + (1.0 - f64::from(y)) * (1.0 - pc).ln());
        let loss = focal_loss(p, y, &params);
        assert!((loss - 0.5 * bce).abs() < 1e-9, "p={p} y={y}: {loss} vs {}", 0.5 * bce);

        let grad = focal_loss_grad(p, y, &params);
        let want = if p <= PROB_EPSILON || p >= 1.0 - PROB_EPSILON {
            0.0
        } else if y == 1 {
            -0.5 / p
        } else {
            0.5 / (1.0 - p)
        };
        assert!((grad - want).abs() < 1e-9, "p={p} y={y}: grad {grad} vs {want}");
    }
    pass(4, "focal-loss degeneracy");
}

// ---------------------------------------------------------------------------
// criterion 5: threshold optimizer vs dense grid

#[test]
fn criterion_5_threshold_optimizer() {
    let mut rng = ChaCha20Rng::seed_from_u64(505);
    for round in 0..500 {
        let n = rng.gen_range(4..=60);
        let (probs, labels) = loop {
            // three-decimal probabilities so every decision boundary lies on
            // the 1e-4 grid
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=1000) as f64 / 1000.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            let pos = labels.iter().filter(|&&y| y == 1).count();
            if pos > 0 && pos < n {
                break (probs, labels);
            }
        };
        let f1_at = |t: f64| -> f64 {
            let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= t)).collect();
            f1(&confusion(&pred, &labels).unwrap())
        };
        let chosen = optimize_threshold(&probs, &labels).unwrap();
        let achieved = f1_at(chosen);
        let mut grid_best = -1.0f64;
        for step in 0..=10_000 {
            grid_best = grid_best.max(f1_at(step as f64 * 1e-4));
        }
        assert!(
            (achieved - grid_best).abs() <= 1e-12,
            "round {round}: optimizer F1 {achieved} vs grid {grid_best}"
        );
    }
    pass(5, "threshold optimizer");
}

// ---------------------------------------------------------------------------
// criterion 6: fast-mode determinism through the CLI

const CONFIG_TEXT: &str = "\
seed = 11
artifacts.dir = artifacts
data.train = train.csv
data.test_plus = test.csv
fast.fraction = 0.5
meta.k_folds = 2
meta.forest.n_trees = 25
meta.forest.max_depth = 6
dos.train.epochs = 2
dos.width_divisor = 16
dos.resample.k_neighbors = 3
probe.train.epochs = 2
probe.width_divisor = 16
probe.resample.k_neighbors = 3
r2l.train.epochs = 2
r2l.width_divisor = 16
r2l.resample.k_neighbors = 3
u2r.train.epochs = 2
u2r.width_divisor = 16
u2r.resample.k_neighbors = 3
";

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_nids"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "nids {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_pipeline(dir: &Path) -> Vec<u8> {
    let counts = [
        (AttackCategory::Normal, 200),
        (AttackCategory::DoS, 80),
        (AttackCategory::Probe, 80),
        (AttackCategory::R2L, 70),
        (AttackCategory::U2R, 60),
    ];
    let test_counts = [
        (AttackCategory::Normal, 60),
        (AttackCategory::DoS, 25),
        (AttackCategory::Probe, 25),
        (AttackCategory::R2L, 25),
        (AttackCategory::U2R, 25),
    ];
    std::fs::write(dir.join("train.csv"), synthetic_nslkdd(&counts, 1)).unwrap();
    std::fs::write(dir.join("test.csv"), synthetic_nslkdd(&test_counts, 2)).unwrap();
    std::fs::write(dir.join("config.txt"), CONFIG_TEXT).unwrap();

    cli(dir, &["--config", "config.txt", "train", "--scope", "all"]);
    cli(
        dir,
        &[
            "--config",
            "config.txt",
            "evaluate",
            "--dataset",
            "test_plus",
            "--target",
            "meta",
        ],
    );
    cli(
        dir,
        &[
            "--config",
            "config.txt",
            "evaluate",
            "--dataset",
            "test_plus",
            "--target",
            "dos",
        ],
    );
    let score = cli(dir, &["--config", "config.txt", "score", "--input", "test.csv"]);
    score.stdout
}

#[test]
fn criterion_6_fast_mode_determinism() {
    let base = tempfile::tempdir().unwrap();
    let run_a = base.path().join("a");
    let run_b = base.path().join("b");
    std::fs::create_dir_all(&run_a).unwrap();
    std::fs::create_dir_all(&run_b).unwrap();

    let score_a = run_pipeline(&run_a);
    let score_b = run_pipeline(&run_b);
    assert_eq!(score_a, score_b, "score output differs between runs");
    assert!(!score_a.is_empty());

    // every artifact and report byte-identical; the manifest records wall
    // times and is excluded
    let mut names: Vec<String> = std::fs::read_dir(run_a.join("artifacts"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt")
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.ends_with(".nids")));
    assert!(names.iter().any(|n| n.starts_with("report.meta.")));
    for name in names {
        let a = std::fs::read(run_a.join("artifacts").join(&name)).unwrap();
        let b = std::fs::read(run_b.join("artifacts").join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically-seeded runs");
    }
    pass(6, "fast-mode determinism");
}

// ---------------------------------------------------------------------------
// criterion 7: encoded train/test consistency

#[test]
fn criterion_7_pipeline_consistency() {
    let mapping = AttackMapping::bundled();
    let train_text = synthetic_nslkdd(
        &[
            (AttackCategory::Normal, 120),
            (AttackCategory::DoS, 40),
            (AttackCategory::Probe, 30),
            (AttackCategory::R2L, 25),
            (AttackCategory::U2R, 20),
        ],
        7,
    );
    let mut test_text = synthetic_nslkdd(
        &[
            (AttackCategory::Normal, 40),
            (AttackCategory::DoS, 15),
            (AttackCategory::Probe, 15),
            (AttackCategory::R2L, 10),
            (AttackCategory::U2R, 10),
        ],
        8,
    );
    // give the test split a service value the train split never produces, so
    // the union vocabulary genuinely matters
    let first_nl = test_text.find('\n').unwrap();
    let mut fields: Vec<&str> = test_text[..first_nl].split(',').collect();
    fields[2] = "telnet";
    let patched = fields.join(",");
    test_text = format!("{patched}{}", &test_text[first_nl..]);

    let train = parse_nslkdd_text(&train_text, "train", &mapping, DatasetSource::Train).unwrap();
    let test = parse_nslkdd_text(&test_text, "test", &mapping, DatasetSource::TestPlus).unwrap();
    let vocab = build_vocabulary(&train, &test);
    let enc_train = one_hot_encode(&train, &vocab).unwrap();
    let enc_test = one_hot_encode(&test, &vocab).unwrap();

    assert_eq!(enc_train.column_names, enc_test.column_names);
    assert!(enc_train
        .column_names
        .iter()
        .any(|n| n == "service=telnet"));

    for &fi in &CATEGORICAL_INDICES {
        assert!(is_categorical(fi));
        let prefix = format!("{}=", FEATURE_NAMES[fi]);
        let group: Vec<usize> = enc_train
            .column_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(&prefix))
            .map(|(c, _)| c)
            .collect();
        assert!(!group.is_empty());
        // indicator columns of one feature are contiguous
        assert!(group.windows(2).all(|w| w[1] == w[0] + 1));
        for matrix in [&enc_train, &enc_test] {
            for r in 0..matrix.n_rows {
                let sum: f64 = group.iter().map(|&c| matrix.get(r, c)).sum();
                assert!(
                    (sum - 1.0).abs() < 1e-12,
                    "row {r}: {prefix} indicators sum to {sum}"
                );
            }
        }
    }
    pass(7, "pipeline consistency");
}
