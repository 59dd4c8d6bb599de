//! Dropout feed-forward classifier with hand-derived backpropagation.
//!
//! The first layer consumes a [`SparseVector`]; every later layer is dense.
//! Dropout is applied to the input of every layer (so before each hidden layer
//! and before the softmax layer) with inverted scaling, which makes the
//! deterministic pass equal to the expectation over masks at each
//! pre-activation.

mod checkpoint;
mod optim;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UstError};
use crate::features::SparseVector;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use optim::{Adam, AdamConfig};
pub use train::{evaluate, fit, train_step, Evaluation, FitOptions, FitSummary, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Non-negative multiplier on one example's loss term.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SampleWeight(f64);

impl SampleWeight {
    pub const ONE: SampleWeight = SampleWeight(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(UstError::InvalidWeight(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One training example borrowed from a feature store.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a SparseVector,
    pub label: usize,
    pub weight: SampleWeight,
}

impl<'a> Sample<'a> {
    pub fn new(features: &'a SparseVector, label: usize) -> Self {
        Self {
            features,
            label,
            weight: SampleWeight::ONE,
        }
    }

    pub fn weighted(features: &'a SparseVector, label: usize, weight: SampleWeight) -> Self {
        Self {
            features,
            label,
            weight,
        }
    }
}

/// Shape of a classifier: `[input, hidden..., classes]`, one dropout rate per
/// weight layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_dims: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    /// `input -> hidden -> classes` with the same dropout rate before both layers.
    pub fn single_hidden(input: usize, hidden: usize, classes: usize, dropout: f64) -> Self {
        Self {
            layer_dims: vec![input, hidden, classes],
            dropout_rates: vec![dropout, dropout],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.len() < 2 {
            return Err(UstError::InvalidModel(
                "need at least input and output dims".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(UstError::InvalidModel("layer dims must be positive".into()));
        }
        if *dims.last().unwrap() < 2 {
            return Err(UstError::InvalidModel("need at least 2 classes".into()));
        }
        if dims[0] > u32::MAX as usize {
            return Err(UstError::InvalidModel("input dim exceeds u32 range".into()));
        }
        if self.dropout_rates.len() != dims.len() - 1 {
            return Err(UstError::InvalidModel(format!(
                "{} dropout rates for {} layers",
                self.dropout_rates.len(),
                dims.len() - 1
            )));
        }
        if let Some(p) = self.dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(UstError::InvalidModel(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        Ok(())
    }
}

/// Dense affine layer. `weights[i * outputs + j]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// Layer-0 input after dropout and inverted scaling.
    pub sparse_input: Vec<(u32, f64)>,
    /// Inputs of layers 1.. after dropout and scaling.
    pub dense_inputs: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or 1/(1-p)) for layers 1.., empty when dropout is off.
    pub masks: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pub pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Draws a dropout multiplier: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_multiplier<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < rate {
        0.0
    } else {
        1.0 / (1.0 - rate)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self { config, layers })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub(crate) fn from_parts(config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        for (layer, dims) in layers.iter().zip(config.layer_dims.windows(2)) {
            if layer.inputs != dims[0]
                || layer.outputs != dims[1]
                || layer.weights.len() != dims[0] * dims[1]
                || layer.bias.len() != dims[1]
            {
                return Err(UstError::InvalidModel(
                    "layer shapes disagree with layer_dims".into(),
                ));
            }
        }
        if layers.len() != config.layer_dims.len() - 1 {
            return Err(UstError::InvalidModel("wrong number of layers".into()));
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.config.layer_dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.config.dropout_rates
    }

    /// Replaces every dropout rate with `rate`.
    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.dropout_rates.iter_mut().for_each(|p| *p = rate);
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Order-sensitive 64-bit digest of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    fn check_input(&self, x: &SparseVector) -> Result<()> {
        if x.dim() != self.input_dim() {
            return Err(UstError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    /// Forward pass. `rng = None` disables dropout.
    pub(crate) fn trace<R: Rng + ?Sized>(
        &self,
        x: &SparseVector,
        mut rng: Option<&mut R>,
    ) -> Result<Trace> {
        self.check_input(x)?;
        let rates = &self.config.dropout_rates;
        let act = self.config.activation;

        let sparse_input: Vec<(u32, f64)> = match rng.as_deref_mut() {
            Some(r) if rates[0] > 0.0 => x
                .entries()
                .iter()
                .filter_map(|&(i, v)| {
                    let m = dropout_multiplier(rates[0], r);
                    (m != 0.0).then_some((i, v * m))
                })
                .collect(),
            _ => x.entries().to_vec(),
        };

        let first = &self.layers[0];
        let mut z = first.bias.clone();
        for &(i, v) in &sparse_input {
            for (zj, &w) in z.iter_mut().zip(first.row(i as usize)) {
                *zj += v * w;
            }
        }

        let mut dense_inputs = Vec::with_capacity(self.layers.len() - 1);
        let mut masks = Vec::new();
        let mut pre_activations = Vec::with_capacity(self.layers.len() - 1);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let mut input: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre_activations.push(z);
            if let Some(r) = rng.as_deref_mut() {
                if rates[l] > 0.0 {
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| dropout_multiplier(rates[l], r))
                        .collect();
                    input.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
                    masks.push(mask);
                } else {
                    masks.push(vec![1.0; input.len()]);
                }
            }
            let mut next = layer.bias.clone();
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (zj, &w) in next.iter_mut().zip(layer.row(i)) {
                    *zj += a * w;
                }
            }
            dense_inputs.push(input);
            z = next;
        }

        Ok(Trace {
            sparse_input,
            dense_inputs,
            masks,
            pre_activations,
            logits: z,
        })
    }

    /// Output logits with dropout disabled.
    pub fn logits(&self, x: &SparseVector) -> Result<Vec<f64>> {
        Ok(self.trace::<rand_chacha::ChaCha8Rng>(x, None)?.logits)
    }

    /// `softmax(f(x))` with dropout disabled.
    pub fn forward_deterministic(&self, x: &SparseVector) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// One Monte-Carlo dropout sample `softmax(f_{W~}(x))` with a fresh mask.
    pub fn forward_stochastic<R: Rng + ?Sized>(
        &self,
        x: &SparseVector,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        Ok(softmax(&self.trace(x, Some(rng))?.logits))
    }

    /// Pre-activation of the first layer, optionally under a dropout mask.
    pub fn first_layer_preactivation<R: Rng + ?Sized>(
        &self,
        x: &SparseVector,
        rng: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        let t = self.trace(x, rng)?;
        Ok(t.pre_activations.into_iter().next().unwrap_or(t.logits))
    }

    pub fn predict(&self, x: &SparseVector) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}
