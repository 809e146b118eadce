//! A small neural network engine: sequential layer stacks over (batch, time,
//! channels) tensors with exact backpropagation, focal-loss variants and Adam.
//! Feature vectors enter as length-F sequences with one channel so the conv
//! and recurrent layers see them as a signal.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use layers::{Activation, Cache, LayerParams, LayerSpec, Mode, Padding, Shape};
pub use loss::FocalLossParams;
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Number of input features; presented to the stack as (N, F, 1).
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Validate the shape chain and return the activation shape after each
    /// layer. The final shape must be a single sigmoid probability.
    pub fn validate(&self) -> Result<Vec<Shape>> {
        let mut shape = Shape::Seq(self.input_width, 1);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(shape)?;
            shapes.push(shape);
        }
        match (shapes.last(), self.layers.last()) {
            (
                Some(Shape::Flat(1)),
                Some(LayerSpec::Dense {
                    activation: Activation::Sigmoid,
                    ..
                }),
            ) => Ok(shapes),
            _ => Err(Error::LayerShape {
                layer: "network".to_string(),
                message: "output must be Dense(1, sigmoid)".to_string(),
            }),
        }
    }

    pub fn param_count(&self, params: &Params) -> usize {
        params
            .layers
            .iter()
            .flat_map(|l| l.trainable.iter())
            .map(|t| t.len())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

/// Deterministic fan-in uniform initialization.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Params> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shape = Shape::Seq(spec.input_width, 1);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        layers.push(layers::init_layer(layer, shape, &mut rng));
        shape = layer.output_shape(shape)?;
    }
    Ok(Params { layers })
}

/// Forward pass result. Caches are kept so backward and the running-stat
/// update can run later; the pass itself mutates nothing.
pub struct ForwardPass {
    /// Output probabilities, one per row.
    pub probs: Vec<f64>,
    caches: Vec<Cache>,
    input: Tensor,
}

pub fn input_tensor(matrix: &FeatureMatrix, rows: &[usize]) -> Tensor {
    let f = matrix.n_cols;
    let mut data = Vec::with_capacity(rows.len() * f);
    for &r in rows {
        data.extend_from_slice(matrix.row(r));
    }
    Tensor::from_vec(&[rows.len(), f, 1], data)
}

pub fn forward(spec: &NetworkSpec, params: &Params, input: &Tensor, mode: Mode) -> Result<ForwardPass> {
    if params.layers.len() != spec.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.layers.len(),
            actual: params.layers.len(),
            context: "network params".to_string(),
        });
    }
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (idx, (layer, lp)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let (out, cache) = layers::forward_layer(layer, idx, lp, &x, mode)?;
        out.assert_finite(layer.name())?;
        caches.push(cache);
        x = out;
    }
    Ok(ForwardPass {
        probs: x.data,
        caches,
        input: input.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per layer, aligned with `LayerParams::trainable`.
    pub layers: Vec<Vec<Tensor>>,
    /// Gradient with respect to the network input.
    pub input: Tensor,
}

/// Backpropagate dLoss/dprob through the stack.
pub fn backward(
    spec: &NetworkSpec,
    params: &Params,
    pass: &ForwardPass,
    d_probs: &[f64],
) -> Result<Gradients> {
    let n = pass.probs.len();
    let mut d_out = Tensor::from_vec(&[n, 1], d_probs.to_vec());
    let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); spec.layers.len()];
    for idx in (0..spec.layers.len()).rev() {
        let (d_in, g) = layers::backward_layer(
            &spec.layers[idx],
            &params.layers[idx],
            &pass.caches[idx],
            &d_out,
        )?;
        grads[idx] = g;
        d_out = d_in;
    }
    Ok(Gradients {
        layers: grads,
        input: d_out,
    })
}

/// Fold the batch statistics of this step into the running statistics.
pub fn update_running_stats(spec: &NetworkSpec, params: &mut Params, pass: &ForwardPass) {
    for (idx, layer) in spec.layers.iter().enumerate() {
        layers::update_running_stats(layer, &mut params.layers[idx], &pass.caches[idx]);
    }
}

/// Inference probabilities for every row of the matrix.
pub fn predict_proba(spec: &NetworkSpec, params: &Params, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..matrix.n_rows).collect();
    let mut probs = Vec::with_capacity(matrix.n_rows);
    // bounded chunks keep the activation caches small
    for chunk in rows.chunks(256) {
        let input = input_tensor(matrix, chunk);
        let pass = forward(spec, params, &input, Mode::Infer)?;
        probs.extend(pass.probs);
    }
    Ok(probs)
}

impl ForwardPass {
    pub fn input(&self) -> &Tensor {
        &self.input
    }
}
