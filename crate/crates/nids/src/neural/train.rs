//! Minibatch training loop with early stopping, plateau learning-rate decay
//! and best-validation checkpointing. The controllers are plain structs fed
//! one validation loss per epoch so they can be tested in isolation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, batch_loss_grad, FocalLossParams};
use super::optim::{Adam, AdamConfig};
use super::tensor::Tensor;
use super::{backward, forward, input_tensor, update_running_stats, Mode, NetworkSpec, Params};
use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: FocalLossParams,
    /// Per-class sample weights (index 0: negatives, 1: positives).
    pub class_weights: Option<[f64; 2]>,
    pub early_stopping_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr_scale: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            adam: AdamConfig::default(),
            loss: FocalLossParams::default(),
            class_weights: None,
            early_stopping_patience: 5,
            plateau_patience: 3,
            plateau_factor: 0.5,
            min_lr_scale: 1e-3,
            rng_seed: 0,
        }
    }
}

/// Stops when the watched loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feed one epoch's loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Halves the learning-rate scale after `patience` stale epochs.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    patience: usize,
    factor: f64,
    min_scale: f64,
    best: f64,
    stale: usize,
    scale: f64,
}

impl PlateauSchedule {
    pub fn new(patience: usize, factor: f64, min_scale: f64) -> Self {
        PlateauSchedule {
            patience,
            factor,
            min_scale,
            best: f64::INFINITY,
            stale: 0,
            scale: 1.0,
        }
    }

    /// Feed one epoch's loss; returns the scale for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.scale = (self.scale * self.factor).max(self.min_scale);
                self.stale = 0;
            }
        }
        self.scale
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub struct TrainOutcome {
    /// Parameters at the best validation loss.
    pub params: Params,
    pub history: TrainHistory,
}

/// Train a network; returns the checkpoint with the best validation loss.
pub fn train(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train_x: &FeatureMatrix,
    train_y: &[u8],
    val_x: &FeatureMatrix,
    val_y: &[u8],
) -> Result<TrainOutcome> {
    if train_x.n_rows != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.n_rows,
            actual: train_y.len(),
            context: "training labels".to_string(),
        });
    }
    if train_x.n_cols != spec.input_width {
        return Err(Error::DimensionMismatch {
            expected: spec.input_width,
            actual: train_x.n_cols,
            context: "training features".to_string(),
        });
    }

    let mut params = super::init_params(spec, config.rng_seed)?;
    let mut adam = {
        let refs: Vec<&Tensor> = params
            .layers
            .iter()
            .flat_map(|l| l.trainable.iter())
            .collect();
        Adam::new(config.adam, &refs)
    };
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.rng_seed ^ 0x5EED_5EED);

    let sample_weight = |y: u8| -> f64 {
        config
            .class_weights
            .map_or(1.0, |w| if y == 1 { w[1] } else { w[0] })
    };

    let mut stopper = EarlyStopper::new(config.early_stopping_patience);
    let mut schedule = PlateauSchedule::new(
        config.plateau_patience,
        config.plateau_factor,
        config.min_lr_scale,
    );
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params = params.clone();

    let mut order: Vec<usize> = (0..train_x.n_rows).collect();
    let mut step: u64 = 0;
    let mut lr_scale = 1.0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;

        for batch in order.chunks(config.batch_size) {
            step += 1;
            let input = input_tensor(train_x, batch);
            let labels: Vec<u8> = batch.iter().map(|&i| train_y[i]).collect();
            let weights: Vec<f64> = labels.iter().map(|&y| sample_weight(y)).collect();

            let mode = Mode::Train {
                step_seed: config.rng_seed.wrapping_add(step),
            };
            let pass = forward(spec, &params, &input, mode)?;
            let loss = batch_loss(&pass.probs, &labels, Some(&weights), &config.loss);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: step as usize });
            }
            epoch_loss += loss;
            n_batches += 1;

            let d_probs = batch_loss_grad(&pass.probs, &labels, Some(&weights), &config.loss);
            let grads = backward(spec, &params, &pass, &d_probs)?;

            {
                let mut param_refs: Vec<&mut Tensor> = params
                    .layers
                    .iter_mut()
                    .flat_map(|l| l.trainable.iter_mut())
                    .collect();
                let grad_refs: Vec<&Tensor> =
                    grads.layers.iter().flat_map(|g| g.iter()).collect();
                adam.step(&mut param_refs, &grad_refs, lr_scale);
            }
            update_running_stats(spec, &mut params, &pass);
        }

        let train_loss = epoch_loss / n_batches.max(1) as f64;
        let val_loss = validation_loss(spec, &params, val_x, val_y, config)?;

        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr_scale,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best_params = params.clone();
        }
        lr_scale = schedule.observe(val_loss);
        if stopper.observe(val_loss) {
            history.stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
    })
}

fn validation_loss(
    spec: &NetworkSpec,
    params: &Params,
    val_x: &FeatureMatrix,
    val_y: &[u8],
    config: &TrainConfig,
) -> Result<f64> {
    let probs = super::predict_proba(spec, params, val_x)?;
    let weights: Vec<f64> = val_y
        .iter()
        .map(|&y| {
            config
                .class_weights
                .map_or(1.0, |w| if y == 1 { w[1] } else { w[0] })
        })
        .collect();
    Ok(batch_loss(&probs, val_y, Some(&weights), &config.loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, LayerSpec, Padding};

    #[test]
    fn early_stopper_counts_stale_epochs() {
        let mut s = EarlyStopper::new(3);
        assert!(!s.observe(1.0));
        assert!(!s.observe(0.9));
        assert!(!s.observe(0.95));
        assert!(!s.observe(0.91));
        assert!(s.observe(0.9)); // not an improvement over 0.9
        assert!((s.best() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn early_stopper_resets_on_improvement() {
        let mut s = EarlyStopper::new(2);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.1));
        assert!(!s.observe(0.5));
        assert!(!s.observe(0.6));
        assert!(s.observe(0.6));
    }

    #[test]
    fn plateau_schedule_halves_and_clamps() {
        let mut p = PlateauSchedule::new(2, 0.5, 0.2);
        assert_eq!(p.observe(1.0), 1.0);
        assert_eq!(p.observe(1.1), 1.0);
        assert_eq!(p.observe(1.2), 0.5);
        assert_eq!(p.observe(1.3), 0.5);
        assert_eq!(p.observe(1.4), 0.25);
        assert_eq!(p.observe(1.5), 0.25);
        assert_eq!(p.observe(1.6), 0.2); // clamped at min
    }

    fn separable_data(n_per_class: usize, f: usize) -> (FeatureMatrix, Vec<u8>) {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            let phase = i as f64 * 0.37;
            for j in 0..f {
                values.push(-1.0 + 0.1 * ((j as f64 + phase).sin()));
            }
            labels.push(0u8);
            for j in 0..f {
                values.push(1.0 + 0.1 * ((j as f64 * 1.3 + phase).cos()));
            }
            labels.push(1u8);
        }
        let names = (0..f).map(|j| format!("f{j}")).collect();
        (
            FeatureMatrix::new(values, names, 2 * n_per_class),
            labels,
        )
    }

    #[test]
    fn learns_a_separable_problem() {
        let spec = NetworkSpec {
            input_width: 6,
            layers: vec![
                LayerSpec::Conv1D {
                    filters: 4,
                    kernel: 3,
                    padding: Padding::Valid,
                    activation: Activation::Relu,
                },
                LayerSpec::Lstm {
                    units: 4,
                    dropout: 0.0,
                    recurrent_dropout: 0.0,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
        };
        let (x, y) = separable_data(24, 6);
        let (vx, vy) = separable_data(8, 6);
        let config = TrainConfig {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig {
                learning_rate: 0.02,
                ..Default::default()
            },
            loss: FocalLossParams::cross_entropy(),
            rng_seed: 3,
            ..Default::default()
        };
        let outcome = train(&spec, &config, &x, &y, &vx, &vy).unwrap();
        let probs = crate::neural::predict_proba(&spec, &outcome.params, &vx).unwrap();
        let correct = probs
            .iter()
            .zip(&vy)
            .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
            .count();
        assert!(
            correct as f64 / vy.len() as f64 >= 0.95,
            "accuracy {}/{}",
            correct,
            vy.len()
        );
        let first = outcome.history.epochs.first().unwrap().train_loss;
        let best = outcome.history.best_val_loss;
        assert!(best < first);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = NetworkSpec {
            input_width: 5,
            layers: vec![
                LayerSpec::Dropout { rate: 0.2 },
                LayerSpec::Lstm {
                    units: 3,
                    dropout: 0.1,
                    recurrent_dropout: 0.1,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
        };
        let (x, y) = separable_data(10, 5);
        let (vx, vy) = separable_data(4, 5);
        let config = TrainConfig {
            epochs: 4,
            batch_size: 8,
            rng_seed: 11,
            ..Default::default()
        };
        let a = train(&spec, &config, &x, &y, &vx, &vy).unwrap();
        let b = train(&spec, &config, &x, &y, &vx, &vy).unwrap();
        assert_eq!(a.params, b.params);
        for (ra, rb) in a.history.epochs.iter().zip(&b.history.epochs) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
        }
    }
}
