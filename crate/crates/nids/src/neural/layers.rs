//! Layer set for the detector architectures: Conv1D, MaxPooling1D,
//! BatchNorm, Dropout, LSTM, BiLSTM, multi-head self-attention, Dense and a
//! residual conv block. Each layer implements an explicit forward with cache
//! and an exact backward; gradient checks in the test suite hold every one of
//! them to finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BATCHNORM_EPSILON: f64 = 1e-3;
pub const BATCHNORM_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv1D {
        filters: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    },
    MaxPool1D {
        pool: usize,
    },
    BatchNorm,
    Dropout {
        rate: f64,
    },
    Lstm {
        units: usize,
        dropout: f64,
        recurrent_dropout: f64,
    },
    BiLstm {
        fwd_units: usize,
        bwd_units: usize,
    },
    MultiHeadAttention {
        heads: usize,
        key_dim: usize,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    /// Identity-skip around Conv1D(same)+BatchNorm with post-add ReLU.
    Residual {
        kernel: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D { .. } => "Conv1D",
            LayerSpec::MaxPool1D { .. } => "MaxPool1D",
            LayerSpec::BatchNorm => "BatchNorm",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Lstm { .. } => "LSTM",
            LayerSpec::BiLstm { .. } => "BiLSTM",
            LayerSpec::MultiHeadAttention { .. } => "MultiHeadAttention",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Residual { .. } => "Residual",
        }
    }
}

/// Activation shapes flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// (time, channels)
    Seq(usize, usize),
    Flat(usize),
}

impl LayerSpec {
    /// Output shape given the input shape; errors when the layer cannot
    /// consume it.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let err = |msg: String| Error::LayerShape {
            layer: self.name().to_string(),
            message: msg,
        };
        match *self {
            LayerSpec::Conv1D {
                filters,
                kernel,
                padding,
                ..
            } => match input {
                Shape::Seq(t, _) => {
                    let t_out = match padding {
                        Padding::Valid => {
                            if t < kernel {
                                return Err(err(format!("sequence {t} shorter than kernel {kernel}")));
                            }
                            t - kernel + 1
                        }
                        Padding::Same => t,
                    };
                    Ok(Shape::Seq(t_out, filters))
                }
                Shape::Flat(_) => Err(err("needs a sequence input".to_string())),
            },
            LayerSpec::MaxPool1D { pool } => match input {
                Shape::Seq(t, c) => {
                    if t < pool {
                        return Err(err(format!("sequence {t} shorter than pool {pool}")));
                    }
                    Ok(Shape::Seq(t / pool, c))
                }
                Shape::Flat(_) => Err(err("needs a sequence input".to_string())),
            },
            LayerSpec::BatchNorm | LayerSpec::Dropout { .. } => Ok(input),
            LayerSpec::Lstm { units, .. } => match input {
                Shape::Seq(_, _) => Ok(Shape::Flat(units)),
                Shape::Flat(_) => Err(err("needs a sequence input".to_string())),
            },
            LayerSpec::BiLstm {
                fwd_units,
                bwd_units,
            } => match input {
                Shape::Seq(_, _) => Ok(Shape::Flat(fwd_units + bwd_units)),
                Shape::Flat(_) => Err(err("needs a sequence input".to_string())),
            },
            LayerSpec::MultiHeadAttention { .. } => match input {
                Shape::Seq(_, _) => Ok(input),
                Shape::Flat(_) => Err(err("needs a sequence input".to_string())),
            },
            LayerSpec::Dense { units, .. } => match input {
                Shape::Flat(_) => Ok(Shape::Flat(units)),
                Shape::Seq(_, _) => Err(err("needs a flat input".to_string())),
            },
            LayerSpec::Residual { .. } => match input {
                Shape::Seq(_, _) => Ok(input),
                Shape::Flat(_) => Err(err("needs a sequence input".to_string())),
            },
        }
    }
}

/// Trainable tensors plus non-trainable state (BatchNorm running stats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub trainable: Vec<Tensor>,
    pub state: Vec<Tensor>,
}

/// Forward execution mode. `Train` carries the seed every stochastic mask of
/// this step derives from, so re-running the forward (e.g. for finite
/// differences) reproduces it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { step_seed: u64 },
    Infer,
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    fn mask_rng(&self, layer_index: usize, stream: u64) -> ChaCha20Rng {
        let seed = match self {
            Mode::Train { step_seed } => step_seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((layer_index as u64) << 8)
                .wrapping_add(stream),
            Mode::Infer => 0,
        };
        ChaCha20Rng::seed_from_u64(seed)
    }
}

fn uniform_init(rng: &mut ChaCha20Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Initialize a layer's parameters for the given input shape.
pub fn init_layer(spec: &LayerSpec, input: Shape, rng: &mut ChaCha20Rng) -> LayerParams {
    match *spec {
        LayerSpec::Conv1D {
            filters, kernel, ..
        } => {
            let c_in = match input {
                Shape::Seq(_, c) => c,
                Shape::Flat(_) => unreachable!("validated"),
            };
            LayerParams {
                trainable: vec![
                    uniform_init(rng, &[kernel, c_in, filters], kernel * c_in),
                    Tensor::zeros(&[filters]),
                ],
                state: vec![],
            }
        }
        LayerSpec::MaxPool1D { .. } | LayerSpec::Dropout { .. } => LayerParams {
            trainable: vec![],
            state: vec![],
        },
        LayerSpec::BatchNorm => {
            let c = match input {
                Shape::Seq(_, c) => c,
                Shape::Flat(c) => c,
            };
            LayerParams {
                trainable: vec![Tensor::filled(&[c], 1.0), Tensor::zeros(&[c])],
                state: vec![Tensor::zeros(&[c]), Tensor::filled(&[c], 1.0)],
            }
        }
        LayerSpec::Lstm { units, .. } => {
            let c_in = match input {
                Shape::Seq(_, c) => c,
                Shape::Flat(_) => unreachable!("validated"),
            };
            LayerParams {
                trainable: lstm_init(rng, c_in, units),
                state: vec![],
            }
        }
        LayerSpec::BiLstm {
            fwd_units,
            bwd_units,
        } => {
            let c_in = match input {
                Shape::Seq(_, c) => c,
                Shape::Flat(_) => unreachable!("validated"),
            };
            let mut trainable = lstm_init(rng, c_in, fwd_units);
            trainable.extend(lstm_init(rng, c_in, bwd_units));
            LayerParams {
                trainable,
                state: vec![],
            }
        }
        LayerSpec::MultiHeadAttention { heads, key_dim } => {
            let c = match input {
                Shape::Seq(_, c) => c,
                Shape::Flat(_) => unreachable!("validated"),
            };
            let mut trainable = Vec::new();
            for _ in 0..3 {
                // Wq / Wk / Wv: [heads, c, key_dim]
                trainable.push(uniform_init(rng, &[heads, c, key_dim], c));
                trainable.push(Tensor::zeros(&[heads, key_dim]));
            }
            trainable.push(uniform_init(rng, &[heads * key_dim, c], heads * key_dim));
            trainable.push(Tensor::zeros(&[c]));
            LayerParams {
                trainable,
                state: vec![],
            }
        }
        LayerSpec::Dense { units, .. } => {
            let c_in = match input {
                Shape::Flat(c) => c,
                Shape::Seq(_, _) => unreachable!("validated"),
            };
            LayerParams {
                trainable: vec![
                    uniform_init(rng, &[c_in, units], c_in),
                    Tensor::zeros(&[units]),
                ],
                state: vec![],
            }
        }
        LayerSpec::Residual { kernel } => {
            let c = match input {
                Shape::Seq(_, c) => c,
                Shape::Flat(_) => unreachable!("validated"),
            };
            LayerParams {
                trainable: vec![
                    uniform_init(rng, &[kernel, c, c], kernel * c),
                    Tensor::zeros(&[c]),
                    Tensor::filled(&[c], 1.0),
                    Tensor::zeros(&[c]),
                ],
                state: vec![Tensor::zeros(&[c]), Tensor::filled(&[c], 1.0)],
            }
        }
    }
}

fn lstm_init(rng: &mut ChaCha20Rng, c_in: usize, units: usize) -> Vec<Tensor> {
    let wx = uniform_init(rng, &[c_in, 4 * units], c_in);
    let wh = uniform_init(rng, &[units, 4 * units], units);
    // forget-gate bias starts at 1 (gate order i, f, g, o)
    let mut b = Tensor::zeros(&[4 * units]);
    for i in units..2 * units {
        b.data[i] = 1.0;
    }
    vec![wx, wh, b]
}

// ---------------------------------------------------------------------------
// forward caches

#[derive(Debug, Clone)]
pub enum Cache {
    Conv {
        input: Tensor,
        preact: Tensor,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_shape: (usize, usize, usize),
    },
    BatchNorm {
        normalized: Tensor,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        train: bool,
    },
    Dropout {
        mask: Option<Vec<f64>>,
    },
    Lstm(LstmCache),
    BiLstm {
        fwd: LstmCache,
        bwd: LstmCache,
    },
    Mha(MhaCache),
    Dense {
        input: Tensor,
        output: Tensor,
    },
    Residual {
        conv: Box<Cache>,
        bn: Box<Cache>,
        sum: Tensor,
    },
    Identity,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Input after the (optional) input dropout mask, (N, T, C).
    masked_input: Tensor,
    /// Gate activations per step: i, f, g, o each (N, T, U).
    gates: [Tensor; 4],
    /// Cell states (N, T, U) and their tanh.
    cells: Tensor,
    tanh_cells: Tensor,
    /// Hidden states (N, T, U), pre-mask.
    hidden: Tensor,
    input_mask: Option<Vec<f64>>,
    recurrent_mask: Option<Vec<f64>>,
    reversed: bool,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    input: Tensor,
    /// Per-head Q, K, V, each (N, H, T, D) flattened.
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights (N, H, T, T).
    attn: Tensor,
    /// Concatenated head outputs (N, T, H*D).
    concat: Tensor,
}

// ---------------------------------------------------------------------------
// forward

pub fn forward_layer(
    spec: &LayerSpec,
    layer_index: usize,
    params: &LayerParams,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    match *spec {
        LayerSpec::Conv1D {
            filters,
            kernel,
            padding,
            activation,
        } => conv1d_forward(params, input, filters, kernel, padding, activation),
        LayerSpec::MaxPool1D { pool } => maxpool_forward(input, pool),
        LayerSpec::BatchNorm => batchnorm_forward(&params.trainable, &params.state, input, mode),
        LayerSpec::Dropout { rate } => {
            dropout_forward(input, rate, mode.mask_rng(layer_index, 0), mode)
        }
        LayerSpec::Lstm {
            units,
            dropout,
            recurrent_dropout,
        } => {
            let cache = lstm_forward(
                &params.trainable[0],
                &params.trainable[1],
                &params.trainable[2],
                input,
                units,
                dropout,
                recurrent_dropout,
                false,
                mode.mask_rng(layer_index, 1),
                mode,
            )?;
            let out = lstm_last_hidden(&cache, units);
            Ok((out, Cache::Lstm(cache)))
        }
        LayerSpec::BiLstm {
            fwd_units,
            bwd_units,
        } => {
            let fwd = lstm_forward(
                &params.trainable[0],
                &params.trainable[1],
                &params.trainable[2],
                input,
                fwd_units,
                0.0,
                0.0,
                false,
                mode.mask_rng(layer_index, 2),
                mode,
            )?;
            let bwd = lstm_forward(
                &params.trainable[3],
                &params.trainable[4],
                &params.trainable[5],
                input,
                bwd_units,
                0.0,
                0.0,
                true,
                mode.mask_rng(layer_index, 3),
                mode,
            )?;
            let hf = lstm_last_hidden(&fwd, fwd_units);
            let hb = lstm_last_hidden(&bwd, bwd_units);
            let n = input.dims3().0;
            let mut data = Vec::with_capacity(n * (fwd_units + bwd_units));
            for i in 0..n {
                data.extend_from_slice(&hf.data[i * fwd_units..(i + 1) * fwd_units]);
                data.extend_from_slice(&hb.data[i * bwd_units..(i + 1) * bwd_units]);
            }
            Ok((
                Tensor::from_vec(&[n, fwd_units + bwd_units], data),
                Cache::BiLstm { fwd, bwd },
            ))
        }
        LayerSpec::MultiHeadAttention { heads, key_dim } => {
            mha_forward(&params.trainable, input, heads, key_dim)
        }
        LayerSpec::Dense { units, activation } => {
            dense_forward(&params.trainable[0], &params.trainable[1], input, units, activation)
        }
        LayerSpec::Residual { kernel } => residual_forward(params, input, kernel, mode),
    }
}

// ---------------------------------------------------------------------------
// backward

/// Returns (d_input, gradients aligned with `params.trainable`).
pub fn backward_layer(
    spec: &LayerSpec,
    params: &LayerParams,
    cache: &Cache,
    d_out: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    match (spec, cache) {
        (
            LayerSpec::Conv1D {
                filters,
                kernel,
                padding,
                activation,
            },
            Cache::Conv { input, preact },
        ) => conv1d_backward(
            params, input, preact, d_out, *filters, *kernel, *padding, *activation,
        ),
        (LayerSpec::MaxPool1D { .. }, Cache::MaxPool { argmax, in_shape }) => {
            let mut d_in = Tensor::zeros(&[in_shape.0, in_shape.1, in_shape.2]);
            for (o, &src) in argmax.iter().enumerate() {
                d_in.data[src] += d_out.data[o];
            }
            Ok((d_in, vec![]))
        }
        (LayerSpec::BatchNorm, Cache::BatchNorm { .. }) => {
            batchnorm_backward(&params.trainable, cache, d_out)
        }
        (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
            let mut d_in = d_out.clone();
            if let Some(m) = mask {
                for (d, &f) in d_in.data.iter_mut().zip(m) {
                    *d *= f;
                }
            }
            Ok((d_in, vec![]))
        }
        (LayerSpec::Lstm { units, .. }, Cache::Lstm(cache)) => {
            let (d_in, grads) = lstm_backward(
                &params.trainable[0],
                &params.trainable[1],
                cache,
                d_out,
                *units,
            );
            Ok((d_in, grads))
        }
        (
            LayerSpec::BiLstm {
                fwd_units,
                bwd_units,
            },
            Cache::BiLstm { fwd, bwd },
        ) => {
            let n = d_out.dims2().0;
            let mut d_fwd = Tensor::zeros(&[n, *fwd_units]);
            let mut d_bwd = Tensor::zeros(&[n, *bwd_units]);
            for i in 0..n {
                let row = &d_out.data[i * (fwd_units + bwd_units)..(i + 1) * (fwd_units + bwd_units)];
                d_fwd.data[i * fwd_units..(i + 1) * fwd_units].copy_from_slice(&row[..*fwd_units]);
                d_bwd.data[i * bwd_units..(i + 1) * bwd_units].copy_from_slice(&row[*fwd_units..]);
            }
            let (dx_f, grads_f) = lstm_backward(
                &params.trainable[0],
                &params.trainable[1],
                fwd,
                &d_fwd,
                *fwd_units,
            );
            let (dx_b, grads_b) = lstm_backward(
                &params.trainable[3],
                &params.trainable[4],
                bwd,
                &d_bwd,
                *bwd_units,
            );
            let mut d_in = dx_f;
            for (d, s) in d_in.data.iter_mut().zip(&dx_b.data) {
                *d += s;
            }
            let mut grads = grads_f;
            grads.extend(grads_b);
            Ok((d_in, grads))
        }
        (LayerSpec::MultiHeadAttention { heads, key_dim }, Cache::Mha(cache)) => {
            mha_backward(&params.trainable, cache, d_out, *heads, *key_dim)
        }
        (LayerSpec::Dense { activation, .. }, Cache::Dense { input, output }) => {
            dense_backward(&params.trainable[0], input, output, d_out, *activation)
        }
        (LayerSpec::Residual { kernel }, Cache::Residual { conv, bn, sum }) => {
            residual_backward(params, conv, bn, sum, d_out, *kernel)
        }
        _ => Err(Error::LayerShape {
            layer: spec.name().to_string(),
            message: "cache/spec mismatch".to_string(),
        }),
    }
}

/// Apply the momentum update of BatchNorm running statistics from a training
/// forward pass. Called once per optimizer step.
pub fn update_running_stats(spec: &LayerSpec, params: &mut LayerParams, cache: &Cache) {
    match (spec, cache) {
        (
            LayerSpec::BatchNorm,
            Cache::BatchNorm {
                batch_mean,
                batch_var,
                train: true,
                ..
            },
        ) => {
            apply_momentum(&mut params.state, batch_mean, batch_var);
        }
        (LayerSpec::Residual { .. }, Cache::Residual { bn, .. }) => {
            if let Cache::BatchNorm {
                batch_mean,
                batch_var,
                train: true,
                ..
            } = bn.as_ref()
            {
                apply_momentum(&mut params.state, batch_mean, batch_var);
            }
        }
        _ => {}
    }
}

fn apply_momentum(state: &mut [Tensor], batch_mean: &[f64], batch_var: &[f64]) {
    for (rm, &m) in state[0].data.iter_mut().zip(batch_mean) {
        *rm = BATCHNORM_MOMENTUM * *rm + (1.0 - BATCHNORM_MOMENTUM) * m;
    }
    for (rv, &v) in state[1].data.iter_mut().zip(batch_var) {
        *rv = BATCHNORM_MOMENTUM * *rv + (1.0 - BATCHNORM_MOMENTUM) * v;
    }
}

// ---------------------------------------------------------------------------
// conv1d

fn conv1d_forward(
    params: &LayerParams,
    input: &Tensor,
    filters: usize,
    kernel: usize,
    padding: Padding,
    activation: Activation,
) -> Result<(Tensor, Cache)> {
    let (n, t, c_in) = input.dims3();
    let w = &params.trainable[0];
    let b = &params.trainable[1];
    let (t_out, pad_left) = match padding {
        Padding::Valid => (t - kernel + 1, 0isize),
        Padding::Same => (t, ((kernel - 1) / 2) as isize),
    };
    let mut pre = Tensor::zeros(&[n, t_out, filters]);
    for ni in 0..n {
        for to in 0..t_out {
            for f in 0..filters {
                let mut acc = b.data[f];
                for k in 0..kernel {
                    let ti = to as isize + k as isize - pad_left;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let ti = ti as usize;
                    for ci in 0..c_in {
                        acc += w.data[(k * c_in + ci) * filters + f] * input.at3(ni, ti, ci);
                    }
                }
                pre.set3(ni, to, f, acc);
            }
        }
    }
    let out = apply_activation(&pre, activation);
    Ok((
        out,
        Cache::Conv {
            input: input.clone(),
            preact: pre,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    params: &LayerParams,
    input: &Tensor,
    preact: &Tensor,
    d_out: &Tensor,
    filters: usize,
    kernel: usize,
    padding: Padding,
    activation: Activation,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (n, t, c_in) = input.dims3();
    let t_out = preact.dims3().1;
    let pad_left = match padding {
        Padding::Valid => 0isize,
        Padding::Same => ((kernel - 1) / 2) as isize,
    };
    let w = &params.trainable[0];
    let dz = activation_backward(preact, d_out, activation);

    let mut dw = Tensor::zeros(&w.shape);
    let mut db = Tensor::zeros(&[filters]);
    let mut d_in = Tensor::zeros(&[n, t, c_in]);

    for ni in 0..n {
        for to in 0..t_out {
            for f in 0..filters {
                let g = dz.at3(ni, to, f);
                if g == 0.0 {
                    continue;
                }
                db.data[f] += g;
                for k in 0..kernel {
                    let ti = to as isize + k as isize - pad_left;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let ti = ti as usize;
                    for ci in 0..c_in {
                        dw.data[(k * c_in + ci) * filters + f] += g * input.at3(ni, ti, ci);
                        d_in.data[(ni * t + ti) * c_in + ci] +=
                            g * w.data[(k * c_in + ci) * filters + f];
                    }
                }
            }
        }
    }
    Ok((d_in, vec![dw, db]))
}

fn apply_activation(pre: &Tensor, activation: Activation) -> Tensor {
    let data = pre
        .data
        .iter()
        .map(|&z| match activation {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        })
        .collect();
    Tensor::from_vec(&pre.shape, data)
}

fn activation_backward(pre: &Tensor, d_out: &Tensor, activation: Activation) -> Tensor {
    let data = pre
        .data
        .iter()
        .zip(&d_out.data)
        .map(|(&z, &d)| match activation {
            Activation::Linear => d,
            Activation::Relu => {
                if z > 0.0 {
                    d
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                d * s * (1.0 - s)
            }
        })
        .collect();
    Tensor::from_vec(&pre.shape, data)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// maxpool

fn maxpool_forward(input: &Tensor, pool: usize) -> Result<(Tensor, Cache)> {
    let (n, t, c) = input.dims3();
    let t_out = t / pool;
    let mut out = Tensor::zeros(&[n, t_out, c]);
    let mut argmax = vec![0usize; n * t_out * c];
    for ni in 0..n {
        for to in 0..t_out {
            for ci in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for k in 0..pool {
                    let ti = to * pool + k;
                    let v = input.at3(ni, ti, ci);
                    if v > best {
                        best = v;
                        best_idx = (ni * t + ti) * c + ci;
                    }
                }
                out.set3(ni, to, ci, best);
                argmax[(ni * t_out + to) * c + ci] = best_idx;
            }
        }
    }
    Ok((
        out,
        Cache::MaxPool {
            argmax,
            in_shape: (n, t, c),
        },
    ))
}

// ---------------------------------------------------------------------------
// batchnorm

fn batchnorm_forward(
    trainable: &[Tensor],
    state: &[Tensor],
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let (gamma, beta) = (&trainable[0], &trainable[1]);
    let c = gamma.len();
    let m = input.len() / c;
    let (mean, var) = if mode.is_train() {
        let mut mean = vec![0.0; c];
        for (i, &v) in input.data.iter().enumerate() {
            mean[i % c] += v;
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut var = vec![0.0; c];
        for (i, &v) in input.data.iter().enumerate() {
            let d = v - mean[i % c];
            var[i % c] += d * d;
        }
        for v in &mut var {
            *v /= m as f64;
        }
        (mean, var)
    } else {
        (state[0].data.clone(), state[1].data.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BATCHNORM_EPSILON).sqrt()).collect();

    let mut normalized = Tensor::zeros(&input.shape);
    let mut out = Tensor::zeros(&input.shape);
    for (i, &v) in input.data.iter().enumerate() {
        let ci = i % c;
        let xh = (v - mean[ci]) * inv_std[ci];
        normalized.data[i] = xh;
        out.data[i] = gamma.data[ci] * xh + beta.data[ci];
    }
    Ok((
        out,
        Cache::BatchNorm {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            train: mode.is_train(),
        },
    ))
}

fn batchnorm_backward(
    trainable: &[Tensor],
    cache: &Cache,
    d_out: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let Cache::BatchNorm {
        normalized,
        inv_std,
        train,
        ..
    } = cache
    else {
        unreachable!()
    };
    let gamma = &trainable[0];
    let c = gamma.len();
    let m = d_out.len() / c;

    let mut d_gamma = Tensor::zeros(&[c]);
    let mut d_beta = Tensor::zeros(&[c]);
    for (i, &d) in d_out.data.iter().enumerate() {
        let ci = i % c;
        d_gamma.data[ci] += d * normalized.data[i];
        d_beta.data[ci] += d;
    }

    let mut d_in = Tensor::zeros(&d_out.shape);
    if *train {
        for (i, &d) in d_out.data.iter().enumerate() {
            let ci = i % c;
            d_in.data[i] = gamma.data[ci] * inv_std[ci] / m as f64
                * (m as f64 * d - d_beta.data[ci] - normalized.data[i] * d_gamma.data[ci]);
        }
    } else {
        // infer mode is a fixed affine map
        for (i, &d) in d_out.data.iter().enumerate() {
            let ci = i % c;
            d_in.data[i] = d * gamma.data[ci] * inv_std[ci];
        }
    }
    Ok((d_in, vec![d_gamma, d_beta]))
}

// ---------------------------------------------------------------------------
// dropout

fn dropout_forward(
    input: &Tensor,
    rate: f64,
    mut rng: ChaCha20Rng,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    if !mode.is_train() || rate == 0.0 {
        return Ok((input.clone(), Cache::Dropout { mask: None }));
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let data = input.data.iter().zip(&mask).map(|(&v, &f)| v * f).collect();
    Ok((
        Tensor::from_vec(&input.shape, data),
        Cache::Dropout { mask: Some(mask) },
    ))
}

// ---------------------------------------------------------------------------
// lstm

#[allow(clippy::too_many_arguments)]
fn lstm_forward(
    wx: &Tensor,
    wh: &Tensor,
    b: &Tensor,
    input: &Tensor,
    units: usize,
    dropout: f64,
    recurrent_dropout: f64,
    reversed: bool,
    mut rng: ChaCha20Rng,
    mode: Mode,
) -> Result<LstmCache> {
    let (n, t, c) = input.dims3();

    // Keras-style: one input mask and one recurrent mask per sample, shared
    // across timesteps
    let make_mask = |rng: &mut ChaCha20Rng, len: usize, rate: f64| -> Option<Vec<f64>> {
        if !mode.is_train() || rate == 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        Some(
            (0..len)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        )
    };
    let input_mask = make_mask(&mut rng, n * c, dropout);
    let recurrent_mask = make_mask(&mut rng, n * units, recurrent_dropout);

    let mut masked_input = input.clone();
    if let Some(mask) = &input_mask {
        for ni in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    let idx = (ni * t + ti) * c + ci;
                    masked_input.data[idx] *= mask[ni * c + ci];
                }
            }
        }
    }

    let mut gates = [
        Tensor::zeros(&[n, t, units]),
        Tensor::zeros(&[n, t, units]),
        Tensor::zeros(&[n, t, units]),
        Tensor::zeros(&[n, t, units]),
    ];
    let mut cells = Tensor::zeros(&[n, t, units]);
    let mut tanh_cells = Tensor::zeros(&[n, t, units]);
    let mut hidden = Tensor::zeros(&[n, t, units]);

    let mut h_prev = vec![0.0; n * units];
    let mut c_prev = vec![0.0; n * units];
    let steps: Vec<usize> = if reversed {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };
    for (pos, &ti) in steps.iter().enumerate() {
        for ni in 0..n {
            // z = x_t Wx + h~ Wh + b
            let mut z = vec![0.0; 4 * units];
            z.copy_from_slice(&b.data);
            for ci in 0..c {
                let x = masked_input.at3(ni, ti, ci);
                if x == 0.0 {
                    continue;
                }
                let row = &wx.data[ci * 4 * units..(ci + 1) * 4 * units];
                for (zj, &wj) in z.iter_mut().zip(row) {
                    *zj += x * wj;
                }
            }
            for u in 0..units {
                let mut h = h_prev[ni * units + u];
                if pos > 0 {
                    if let Some(mask) = &recurrent_mask {
                        h *= mask[ni * units + u];
                    }
                } else {
                    // h_prev is zero at the first step
                    continue;
                }
                if h == 0.0 {
                    continue;
                }
                let row = &wh.data[u * 4 * units..(u + 1) * 4 * units];
                for (zj, &wj) in z.iter_mut().zip(row) {
                    *zj += h * wj;
                }
            }
            for u in 0..units {
                let i_g = sigmoid(z[u]);
                let f_g = sigmoid(z[units + u]);
                let g_g = z[2 * units + u].tanh();
                let o_g = sigmoid(z[3 * units + u]);
                let c_new = f_g * c_prev[ni * units + u] + i_g * g_g;
                let tc = c_new.tanh();
                let h_new = o_g * tc;
                gates[0].set3(ni, ti, u, i_g);
                gates[1].set3(ni, ti, u, f_g);
                gates[2].set3(ni, ti, u, g_g);
                gates[3].set3(ni, ti, u, o_g);
                cells.set3(ni, ti, u, c_new);
                tanh_cells.set3(ni, ti, u, tc);
                hidden.set3(ni, ti, u, h_new);
                h_prev[ni * units + u] = h_new;
                c_prev[ni * units + u] = c_new;
            }
        }
    }

    Ok(LstmCache {
        masked_input,
        gates,
        cells,
        tanh_cells,
        hidden,
        input_mask,
        recurrent_mask,
        reversed,
    })
}

fn lstm_last_hidden(cache: &LstmCache, units: usize) -> Tensor {
    let (n, t, _) = cache.hidden.dims3();
    let last_t = if cache.reversed { 0 } else { t - 1 };
    let mut out = Tensor::zeros(&[n, units]);
    for ni in 0..n {
        for u in 0..units {
            out.data[ni * units + u] = cache.hidden.at3(ni, last_t, u);
        }
    }
    out
}

/// BPTT through a single LSTM given dLoss/d(last hidden state).
fn lstm_backward(
    wx: &Tensor,
    wh: &Tensor,
    cache: &LstmCache,
    d_last: &Tensor,
    units: usize,
) -> (Tensor, Vec<Tensor>) {
    let (n, t, c) = cache.masked_input.dims3();
    let mut dwx = Tensor::zeros(&wx.shape);
    let mut dwh = Tensor::zeros(&wh.shape);
    let mut db = Tensor::zeros(&[4 * units]);
    let mut d_input = Tensor::zeros(&[n, t, c]);

    let steps: Vec<usize> = if cache.reversed {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };

    let mut dh = vec![0.0; n * units];
    let mut dc = vec![0.0; n * units];
    for ni in 0..n {
        for u in 0..units {
            dh[ni * units + u] = d_last.data[ni * units + u];
        }
    }

    for pos in (0..steps.len()).rev() {
        let ti = steps[pos];
        for ni in 0..n {
            let mut dz = vec![0.0; 4 * units];
            for u in 0..units {
                let idx = ni * units + u;
                let i_g = cache.gates[0].at3(ni, ti, u);
                let f_g = cache.gates[1].at3(ni, ti, u);
                let g_g = cache.gates[2].at3(ni, ti, u);
                let o_g = cache.gates[3].at3(ni, ti, u);
                let tc = cache.tanh_cells.at3(ni, ti, u);
                let c_prev = if pos > 0 {
                    cache.cells.at3(ni, steps[pos - 1], u)
                } else {
                    0.0
                };

                let dh_u = dh[idx];
                let mut dc_u = dc[idx] + dh_u * o_g * (1.0 - tc * tc);
                let do_g = dh_u * tc;
                let df = dc_u * c_prev;
                let di = dc_u * g_g;
                let dg = dc_u * i_g;
                dz[u] = di * i_g * (1.0 - i_g);
                dz[units + u] = df * f_g * (1.0 - f_g);
                dz[2 * units + u] = dg * (1.0 - g_g * g_g);
                dz[3 * units + u] = do_g * o_g * (1.0 - o_g);
                dc_u *= f_g;
                dc[idx] = dc_u;
            }
            // param grads and input grad
            for (j, &dzj) in dz.iter().enumerate() {
                db.data[j] += dzj;
            }
            for ci in 0..c {
                let x = cache.masked_input.at3(ni, ti, ci);
                let mut dx = 0.0;
                for (j, &dzj) in dz.iter().enumerate() {
                    dwx.data[ci * 4 * units + j] += dzj * x;
                    dx += dzj * wx.data[ci * 4 * units + j];
                }
                // undo the input mask
                let mask = cache
                    .input_mask
                    .as_ref()
                    .map_or(1.0, |m| m[ni * c + ci]);
                d_input.data[(ni * t + ti) * c + ci] = dx * mask;
            }
            // recurrent grads into dh for the previous step
            let mut dh_prev = vec![0.0; units];
            if pos > 0 {
                let prev_t = steps[pos - 1];
                for u in 0..units {
                    let mut h = cache.hidden.at3(ni, prev_t, u);
                    let mask = cache
                        .recurrent_mask
                        .as_ref()
                        .map_or(1.0, |m| m[ni * units + u]);
                    h *= mask;
                    for (j, &dzj) in dz.iter().enumerate() {
                        dwh.data[u * 4 * units + j] += dzj * h;
                        dh_prev[u] += dzj * wh.data[u * 4 * units + j];
                    }
                    dh_prev[u] *= mask;
                    // note: the mask multiplies the *gradient path* into
                    // h_{t-1}; combined above
                }
            }
            for u in 0..units {
                dh[ni * units + u] = if pos > 0 { dh_prev[u] } else { 0.0 };
            }
        }
    }
    (d_input, vec![dwx, dwh, db])
}

// ---------------------------------------------------------------------------
// multi-head self-attention

fn mha_forward(
    trainable: &[Tensor],
    input: &Tensor,
    heads: usize,
    key_dim: usize,
) -> Result<(Tensor, Cache)> {
    let (n, t, c) = input.dims3();
    let (wq, bq, wk, bk, wv, bv, wo, bo) = (
        &trainable[0],
        &trainable[1],
        &trainable[2],
        &trainable[3],
        &trainable[4],
        &trainable[5],
        &trainable[6],
        &trainable[7],
    );
    let scale = 1.0 / (key_dim as f64).sqrt();

    let mut q = Tensor::zeros(&[n, heads, t, key_dim]);
    let mut k = Tensor::zeros(&[n, heads, t, key_dim]);
    let mut v = Tensor::zeros(&[n, heads, t, key_dim]);
    let project = |w: &Tensor, b: &Tensor, out: &mut Tensor| {
        for ni in 0..n {
            for h in 0..heads {
                for ti in 0..t {
                    for d in 0..key_dim {
                        let mut acc = b.data[h * key_dim + d];
                        for ci in 0..c {
                            acc += input.at3(ni, ti, ci) * w.data[(h * c + ci) * key_dim + d];
                        }
                        out.data[((ni * heads + h) * t + ti) * key_dim + d] = acc;
                    }
                }
            }
        }
    };
    project(wq, bq, &mut q);
    project(wk, bk, &mut k);
    project(wv, bv, &mut v);

    let mut attn = Tensor::zeros(&[n, heads, t, t]);
    for ni in 0..n {
        for h in 0..heads {
            for ti in 0..t {
                let mut row = vec![0.0; t];
                let mut max = f64::NEG_INFINITY;
                for tj in 0..t {
                    let mut s = 0.0;
                    for d in 0..key_dim {
                        s += q.data[((ni * heads + h) * t + ti) * key_dim + d]
                            * k.data[((ni * heads + h) * t + tj) * key_dim + d];
                    }
                    let s = s * scale;
                    row[tj] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for s in &mut row {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for (tj, s) in row.iter().enumerate() {
                    attn.data[((ni * heads + h) * t + ti) * t + tj] = s / sum;
                }
            }
        }
    }

    let hd = heads * key_dim;
    let mut concat = Tensor::zeros(&[n, t, hd]);
    for ni in 0..n {
        for h in 0..heads {
            for ti in 0..t {
                for d in 0..key_dim {
                    let mut acc = 0.0;
                    for tj in 0..t {
                        acc += attn.data[((ni * heads + h) * t + ti) * t + tj]
                            * v.data[((ni * heads + h) * t + tj) * key_dim + d];
                    }
                    concat.data[(ni * t + ti) * hd + h * key_dim + d] = acc;
                }
            }
        }
    }

    let mut out = Tensor::zeros(&[n, t, c]);
    for ni in 0..n {
        for ti in 0..t {
            for ci in 0..c {
                let mut acc = bo.data[ci];
                for j in 0..hd {
                    acc += concat.data[(ni * t + ti) * hd + j] * wo.data[j * c + ci];
                }
                out.set3(ni, ti, ci, acc);
            }
        }
    }

    Ok((
        out,
        Cache::Mha(MhaCache {
            input: input.clone(),
            q,
            k,
            v,
            attn,
            concat,
        }),
    ))
}

fn mha_backward(
    trainable: &[Tensor],
    cache: &MhaCache,
    d_out: &Tensor,
    heads: usize,
    key_dim: usize,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (n, t, c) = cache.input.dims3();
    let (wq, wk, wv, wo) = (&trainable[0], &trainable[2], &trainable[4], &trainable[6]);
    let scale = 1.0 / (key_dim as f64).sqrt();
    let hd = heads * key_dim;

    let mut dwq = Tensor::zeros(&wq.shape);
    let mut dbq = Tensor::zeros(&[heads, key_dim]);
    let mut dwk = Tensor::zeros(&wk.shape);
    let mut dbk = Tensor::zeros(&[heads, key_dim]);
    let mut dwv = Tensor::zeros(&wv.shape);
    let mut dbv = Tensor::zeros(&[heads, key_dim]);
    let mut dwo = Tensor::zeros(&wo.shape);
    let mut dbo = Tensor::zeros(&[c]);
    let mut d_in = Tensor::zeros(&[n, t, c]);

    // output projection
    let mut d_concat = Tensor::zeros(&[n, t, hd]);
    for ni in 0..n {
        for ti in 0..t {
            for ci in 0..c {
                let g = d_out.at3(ni, ti, ci);
                dbo.data[ci] += g;
                for j in 0..hd {
                    dwo.data[j * c + ci] += g * cache.concat.data[(ni * t + ti) * hd + j];
                    d_concat.data[(ni * t + ti) * hd + j] += g * wo.data[j * c + ci];
                }
            }
        }
    }

    for ni in 0..n {
        for h in 0..heads {
            // per-head views
            let base = (ni * heads + h) * t;
            let mut dq = vec![0.0; t * key_dim];
            let mut dk = vec![0.0; t * key_dim];
            let mut dv = vec![0.0; t * key_dim];

            for ti in 0..t {
                // dO_h row ti
                let do_row: Vec<f64> = (0..key_dim)
                    .map(|d| d_concat.data[(ni * t + ti) * hd + h * key_dim + d])
                    .collect();
                // dA[ti, tj] = dO_h[ti] . V[tj]; dV[tj] += A[ti,tj] dO_h[ti]
                let mut da = vec![0.0; t];
                for tj in 0..t {
                    let a = cache.attn.data[(base + ti) * t + tj];
                    let mut dot = 0.0;
                    for d in 0..key_dim {
                        let dv_val = do_row[d];
                        dv[tj * key_dim + d] += a * dv_val;
                        dot += dv_val * cache.v.data[(base + tj) * key_dim + d];
                    }
                    da[tj] = dot;
                }
                // softmax backward for row ti
                let mut inner = 0.0;
                for tj in 0..t {
                    inner += da[tj] * cache.attn.data[(base + ti) * t + tj];
                }
                for tj in 0..t {
                    let a = cache.attn.data[(base + ti) * t + tj];
                    let ds = a * (da[tj] - inner) * scale;
                    for d in 0..key_dim {
                        dq[ti * key_dim + d] += ds * cache.k.data[(base + tj) * key_dim + d];
                        dk[tj * key_dim + d] += ds * cache.q.data[(base + ti) * key_dim + d];
                    }
                }
            }

            // projections back to the input
            let mut scatter = |dm: &[f64], w: &Tensor, dw: &mut Tensor, db: &mut Tensor| {
                for ti in 0..t {
                    for d in 0..key_dim {
                        let g = dm[ti * key_dim + d];
                        if g == 0.0 {
                            continue;
                        }
                        db.data[h * key_dim + d] += g;
                        for ci in 0..c {
                            dw.data[(h * c + ci) * key_dim + d] += g * cache.input.at3(ni, ti, ci);
                            d_in.data[(ni * t + ti) * c + ci] +=
                                g * w.data[(h * c + ci) * key_dim + d];
                        }
                    }
                }
            };
            scatter(&dq, wq, &mut dwq, &mut dbq);
            scatter(&dk, wk, &mut dwk, &mut dbk);
            scatter(&dv, wv, &mut dwv, &mut dbv);
        }
    }

    Ok((d_in, vec![dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo]))
}

// ---------------------------------------------------------------------------
// dense

fn dense_forward(
    w: &Tensor,
    b: &Tensor,
    input: &Tensor,
    units: usize,
    activation: Activation,
) -> Result<(Tensor, Cache)> {
    let (n, c_in) = input.dims2();
    let mut pre = Tensor::zeros(&[n, units]);
    for ni in 0..n {
        for u in 0..units {
            let mut acc = b.data[u];
            for ci in 0..c_in {
                acc += input.at2(ni, ci) * w.data[ci * units + u];
            }
            pre.data[ni * units + u] = acc;
        }
    }
    let out = apply_activation(&pre, activation);
    Ok((
        out.clone(),
        Cache::Dense {
            input: input.clone(),
            output: out,
        },
    ))
}

fn dense_backward(
    w: &Tensor,
    input: &Tensor,
    output: &Tensor,
    d_out: &Tensor,
    activation: Activation,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (n, c_in) = input.dims2();
    let units = w.shape[1];
    // activation derivative from the stored output
    let mut dz = Tensor::zeros(&[n, units]);
    for i in 0..n * units {
        let y = output.data[i];
        dz.data[i] = match activation {
            Activation::Linear => d_out.data[i],
            Activation::Relu => {
                if y > 0.0 {
                    d_out.data[i]
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => d_out.data[i] * y * (1.0 - y),
        };
    }
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = Tensor::zeros(&[units]);
    let mut d_in = Tensor::zeros(&[n, c_in]);
    for ni in 0..n {
        for u in 0..units {
            let g = dz.data[ni * units + u];
            if g == 0.0 {
                continue;
            }
            db.data[u] += g;
            for ci in 0..c_in {
                dw.data[ci * units + u] += g * input.at2(ni, ci);
                d_in.data[ni * c_in + ci] += g * w.data[ci * units + u];
            }
        }
    }
    Ok((d_in, vec![dw, db]))
}

// ---------------------------------------------------------------------------
// residual block

fn residual_forward(
    params: &LayerParams,
    input: &Tensor,
    kernel: usize,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let (_, _, c) = input.dims3();
    let conv_params = LayerParams {
        trainable: vec![params.trainable[0].clone(), params.trainable[1].clone()],
        state: vec![],
    };
    let (conv_out, conv_cache) = conv1d_forward(
        &conv_params,
        input,
        c,
        kernel,
        Padding::Same,
        Activation::Linear,
    )?;
    let bn_trainable = [params.trainable[2].clone(), params.trainable[3].clone()];
    let (bn_out, bn_cache) = batchnorm_forward(&bn_trainable, &params.state, &conv_out, mode)?;

    let mut sum = bn_out;
    for (s, &x) in sum.data.iter_mut().zip(&input.data) {
        *s += x;
    }
    let out = apply_activation(&sum, Activation::Relu);
    Ok((
        out,
        Cache::Residual {
            conv: Box::new(conv_cache),
            bn: Box::new(bn_cache),
            sum,
        },
    ))
}

fn residual_backward(
    params: &LayerParams,
    conv_cache: &Cache,
    bn_cache: &Cache,
    sum: &Tensor,
    d_out: &Tensor,
    kernel: usize,
) -> Result<(Tensor, Vec<Tensor>)> {
    let d_sum = activation_backward(sum, d_out, Activation::Relu);
    let bn_trainable = [params.trainable[2].clone(), params.trainable[3].clone()];
    let (d_conv_out, bn_grads) = batchnorm_backward(&bn_trainable, bn_cache, &d_sum)?;
    let conv_params = LayerParams {
        trainable: vec![params.trainable[0].clone(), params.trainable[1].clone()],
        state: vec![],
    };
    let Cache::Conv { input, preact } = conv_cache else {
        unreachable!()
    };
    let c = input.dims3().2;
    let (d_conv_in, conv_grads) = conv1d_backward(
        &conv_params,
        input,
        preact,
        &d_conv_out,
        c,
        kernel,
        Padding::Same,
        Activation::Linear,
    )?;
    // skip path
    let mut d_in = d_conv_in;
    for (d, &s) in d_in.data.iter_mut().zip(&d_sum.data) {
        *d += s;
    }
    let mut grads = conv_grads;
    grads.extend(bn_grads);
    Ok((d_in, grads))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::neural::gradcheck;
    use crate::neural::loss::FocalLossParams;
    use crate::neural::tensor::Tensor;
    use crate::neural::{init_params, NetworkSpec};

    const TOL: f64 = 1e-4;

    fn random_input(n: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[n, f, 1], data)
    }

    fn check_stack(layers: Vec<LayerSpec>, input_width: usize, mode: Mode) {
        let spec = NetworkSpec {
            input_width,
            layers,
        };
        let params = init_params(&spec, 17).unwrap();
        let n = 3;
        let input = random_input(n, input_width, 99);
        let labels = vec![1u8, 0, 1];
        let report = gradcheck::check(
            &spec,
            &params,
            &input,
            &labels,
            &FocalLossParams::cross_entropy(),
            mode,
        )
        .unwrap();
        assert!(
            report.max_rel_error < TOL,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst
        );
    }

    fn head() -> [LayerSpec; 2] {
        [
            LayerSpec::Lstm {
                units: 2,
                dropout: 0.0,
                recurrent_dropout: 0.0,
            },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ]
    }

    #[test]
    fn dense_gradients() {
        check_stack(
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
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            6,
            Mode::Infer,
        );
    }

    #[test]
    fn conv_valid_gradients() {
        let mut layers = vec![LayerSpec::Conv1D {
            filters: 3,
            kernel: 3,
            padding: Padding::Valid,
            activation: Activation::Relu,
        }];
        layers.extend(head());
        check_stack(layers, 7, Mode::Infer);
    }

    #[test]
    fn conv_same_gradients() {
        let mut layers = vec![LayerSpec::Conv1D {
            filters: 2,
            kernel: 3,
            padding: Padding::Same,
            activation: Activation::Linear,
        }];
        layers.extend(head());
        check_stack(layers, 6, Mode::Infer);
    }

    #[test]
    fn maxpool_gradients() {
        let mut layers = vec![
            LayerSpec::Conv1D {
                filters: 2,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool1D { pool: 2 },
        ];
        layers.extend(head());
        check_stack(layers, 8, Mode::Infer);
    }

    #[test]
    fn batchnorm_train_gradients() {
        let mut layers = vec![
            LayerSpec::Conv1D {
                filters: 2,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Linear,
            },
            LayerSpec::BatchNorm,
        ];
        layers.extend(head());
        check_stack(layers, 6, Mode::Train { step_seed: 4 });
    }

    #[test]
    fn batchnorm_infer_gradients() {
        let mut layers = vec![
            LayerSpec::Conv1D {
                filters: 2,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Linear,
            },
            LayerSpec::BatchNorm,
        ];
        layers.extend(head());
        check_stack(layers, 6, Mode::Infer);
    }

    #[test]
    fn dropout_train_gradients() {
        let mut layers = vec![LayerSpec::Dropout { rate: 0.4 }];
        layers.extend(head());
        check_stack(layers, 6, Mode::Train { step_seed: 12 });
    }

    #[test]
    fn lstm_gradients() {
        check_stack(
            vec![
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
            6,
            Mode::Infer,
        );
    }

    #[test]
    fn lstm_dropout_gradients() {
        check_stack(
            vec![
                LayerSpec::Lstm {
                    units: 4,
                    dropout: 0.3,
                    recurrent_dropout: 0.3,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            6,
            Mode::Train { step_seed: 21 },
        );
    }

    #[test]
    fn bilstm_gradients() {
        check_stack(
            vec![
                LayerSpec::BiLstm {
                    fwd_units: 3,
                    bwd_units: 2,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            5,
            Mode::Infer,
        );
    }

    #[test]
    fn attention_gradients() {
        let mut layers = vec![
            LayerSpec::Conv1D {
                filters: 4,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Linear,
            },
            LayerSpec::MultiHeadAttention {
                heads: 2,
                key_dim: 3,
            },
        ];
        layers.extend(head());
        check_stack(layers, 5, Mode::Infer);
    }

    #[test]
    fn residual_gradients() {
        let mut layers = vec![
            LayerSpec::Conv1D {
                filters: 3,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Linear,
            },
            LayerSpec::Residual { kernel: 3 },
        ];
        layers.extend(head());
        check_stack(layers, 6, Mode::Train { step_seed: 8 });
    }

    #[test]
    fn focal_loss_end_to_end_gradients() {
        let spec = NetworkSpec {
            input_width: 6,
            layers: head().to_vec(),
        };
        let params = init_params(&spec, 5).unwrap();
        let input = random_input(3, 6, 31);
        let labels = vec![1u8, 0, 0];
        let report = gradcheck::check(
            &spec,
            &params,
            &input,
            &labels,
            &FocalLossParams::focal(0.25, 2.0),
            Mode::Infer,
        )
        .unwrap();
        assert!(report.max_rel_error < TOL, "{}", report.worst);
    }

    // degeneracy invariants

    #[test]
    fn bilstm_equals_two_lstm_passes() {
        // a BiLSTM output is the forward LSTM's last hidden state next to the
        // reversed-input LSTM's last hidden state
        let n = 2;
        let t = 5;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let input = Tensor::from_vec(
            &[n, t, 1],
            (0..n * t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let spec = LayerSpec::BiLstm {
            fwd_units: 3,
            bwd_units: 2,
        };
        let mut init_rng = ChaCha20Rng::seed_from_u64(9);
        let params = init_layer(&spec, Shape::Seq(t, 1), &mut init_rng);
        let (out, _) = forward_layer(&spec, 0, &params, &input, Mode::Infer).unwrap();

        // forward half on the original input
        let fwd_params = LayerParams {
            trainable: params.trainable[..3].to_vec(),
            state: vec![],
        };
        let fwd_spec = LayerSpec::Lstm {
            units: 3,
            dropout: 0.0,
            recurrent_dropout: 0.0,
        };
        let (h_fwd, _) = forward_layer(&fwd_spec, 0, &fwd_params, &input, Mode::Infer).unwrap();

        // backward half on the explicitly reversed input
        let mut rev = Tensor::zeros(&[n, t, 1]);
        for ni in 0..n {
            for ti in 0..t {
                rev.set3(ni, ti, 0, input.at3(ni, t - 1 - ti, 0));
            }
        }
        let bwd_params = LayerParams {
            trainable: params.trainable[3..].to_vec(),
            state: vec![],
        };
        let bwd_spec = LayerSpec::Lstm {
            units: 2,
            dropout: 0.0,
            recurrent_dropout: 0.0,
        };
        let (h_bwd, _) = forward_layer(&bwd_spec, 0, &bwd_params, &rev, Mode::Infer).unwrap();

        for ni in 0..n {
            for u in 0..3 {
                assert!((out.at2(ni, u) - h_fwd.at2(ni, u)).abs() < 1e-12);
            }
            for u in 0..2 {
                assert!((out.at2(ni, 3 + u) - h_bwd.at2(ni, u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lstm_single_step_matches_cell_equations() {
        // length-1 sequence: h = o * tanh(i * g) with zero initial state
        let units = 3;
        let spec = LayerSpec::Lstm {
            units,
            dropout: 0.0,
            recurrent_dropout: 0.0,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let params = init_layer(&spec, Shape::Seq(1, 2), &mut rng);
        let input = Tensor::from_vec(&[1, 1, 2], vec![0.7, -0.4]);
        let (out, _) = forward_layer(&spec, 0, &params, &input, Mode::Infer).unwrap();

        let wx = &params.trainable[0];
        let b = &params.trainable[2];
        for u in 0..units {
            let z = |gate: usize| -> f64 {
                b.data[gate * units + u]
                    + 0.7 * wx.data[gate * units + u]
                    + -0.4 * wx.data[4 * units + gate * units + u]
            };
            let i_g = sigmoid(z(0));
            let g_g = z(2).tanh();
            let o_g = sigmoid(z(3));
            let expected = o_g * (i_g * g_g).tanh();
            assert!((out.data[u] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_uniform_when_keys_constant() {
        // zero Wk makes every score equal, so attention averages the values
        let heads = 2;
        let key_dim = 2;
        let t = 4;
        let c = 3;
        let spec = LayerSpec::MultiHeadAttention { heads, key_dim };
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut params = init_layer(&spec, Shape::Seq(t, c), &mut rng);
        params.trainable[2] = Tensor::zeros(&[heads, c, key_dim]);
        params.trainable[3] = Tensor::zeros(&[heads, key_dim]);

        let mut data_rng = ChaCha20Rng::seed_from_u64(7);
        let input = Tensor::from_vec(
            &[1, t, c],
            (0..t * c).map(|_| data_rng.gen_range(-1.0..1.0)).collect(),
        );
        let (_, cache) = forward_layer(&spec, 0, &params, &input, Mode::Infer).unwrap();
        let Cache::Mha(cache) = cache else { unreachable!() };
        for w in &cache.attn.data {
            assert!((w - 1.0 / t as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_infer_is_affine_identity_at_defaults() {
        // fresh running stats (mean 0, var 1) and identity gamma/beta leave
        // the input scaled only by 1/sqrt(1 + eps)
        let spec = LayerSpec::BatchNorm;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let params = init_layer(&spec, Shape::Seq(4, 2), &mut rng);
        let input = Tensor::from_vec(&[1, 4, 2], (0..8).map(|i| i as f64).collect());
        let (out, _) = forward_layer(&spec, 0, &params, &input, Mode::Infer).unwrap();
        let scale = 1.0 / (1.0 + BATCHNORM_EPSILON).sqrt();
        for (o, i) in out.data.iter().zip(&input.data) {
            assert!((o - i * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let spec = LayerSpec::BatchNorm;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let params = init_layer(&spec, Shape::Seq(5, 1), &mut rng);
        let input = Tensor::from_vec(&[2, 5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let (out, _) =
            forward_layer(&spec, 0, &params, &input, Mode::Train { step_seed: 0 }).unwrap();
        let mean: f64 = out.data.iter().sum::<f64>() / 10.0;
        let var: f64 = out.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-2); // epsilon shrinks it slightly
    }

    #[test]
    fn dropout_infer_is_identity_and_train_preserves_scale() {
        let spec = LayerSpec::Dropout { rate: 0.5 };
        let params = LayerParams {
            trainable: vec![],
            state: vec![],
        };
        let input = Tensor::filled(&[1, 1000, 1], 1.0);
        let (out, _) = forward_layer(&spec, 0, &params, &input, Mode::Infer).unwrap();
        assert_eq!(out.data, input.data);

        let (out, _) =
            forward_layer(&spec, 0, &params, &input, Mode::Train { step_seed: 77 }).unwrap();
        let mean = out.data.iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1, "kept mass {mean}");
        assert!(out.data.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let spec = LayerSpec::MaxPool1D { pool: 2 };
        let params = LayerParams {
            trainable: vec![],
            state: vec![],
        };
        let input = Tensor::from_vec(&[1, 4, 1], vec![1.0, 3.0, 2.0, -1.0]);
        let (out, cache) = forward_layer(&spec, 0, &params, &input, Mode::Infer).unwrap();
        assert_eq!(out.data, vec![3.0, 2.0]);
        let d_out = Tensor::from_vec(&[1, 2, 1], vec![10.0, 20.0]);
        let (d_in, _) = backward_layer(&spec, &params, &cache, &d_out).unwrap();
        assert_eq!(d_in.data, vec![0.0, 10.0, 20.0, 0.0]);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let spec = LayerSpec::BatchNorm;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut params = init_layer(&spec, Shape::Seq(2, 1), &mut rng);
        let input = Tensor::from_vec(&[1, 2, 1], vec![4.0, 8.0]);
        let (_, cache) =
            forward_layer(&spec, 0, &params, &input, Mode::Train { step_seed: 0 }).unwrap();
        update_running_stats(&spec, &mut params, &cache);
        // batch mean 6, batch var 4
        assert!((params.state[0].data[0] - 0.01 * 6.0).abs() < 1e-12);
        assert!((params.state[1].data[0] - (0.99 + 0.01 * 4.0)).abs() < 1e-12);
    }
}
