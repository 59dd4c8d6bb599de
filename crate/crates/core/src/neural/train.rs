use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, cross_entropy, softmax, Adam, Mlp, Sample};
use crate::error::{Result, UstError};

/// Gradient of the batch loss. First-layer weights are stored by input row and
/// only for rows that some weighted example activated.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub sparse_rows: BTreeMap<u32, Vec<f64>>,
    /// Weight gradients of layers `1..`, laid out like [`super::Layer::weights`].
    pub dense_weights: Vec<Vec<f64>>,
    /// Bias gradients of every layer.
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(model: &Mlp) -> Self {
        Self {
            sparse_rows: BTreeMap::new(),
            dense_weights: model.layers()[1..]
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    /// d loss / d weight of `layer` at flat index `index`.
    pub fn weight(&self, layer: usize, index: usize, width: usize) -> f64 {
        if layer == 0 {
            let row = (index / width) as u32;
            self.sparse_rows
                .get(&row)
                .map(|r| r[index % width])
                .unwrap_or(0.0)
        } else {
            self.dense_weights[layer - 1][index]
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sparse_rows.values().flatten().all(|&g| g == 0.0)
            && self.dense_weights.iter().flatten().all(|&g| g == 0.0)
            && self.biases.iter().flatten().all(|&g| g == 0.0)
    }
}

impl Mlp {
    /// Weighted mean cross-entropy over `batch` and its gradient.
    ///
    /// `rng = None` disables dropout; otherwise every example gets a fresh mask.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        batch: &[Sample<'_>],
        mut rng: Option<&mut R>,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(UstError::EmptyBatch);
        }
        let classes = self.classes();
        let act = self.config.activation;
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros(self);
        let mut loss = 0.0;

        for sample in batch {
            if sample.label >= classes {
                return Err(UstError::LabelOutOfRange {
                    label: sample.label,
                    classes,
                });
            }
            let w = sample.weight.value();
            let trace = self.trace(sample.features, rng.as_deref_mut())?;
            if w == 0.0 {
                continue;
            }
            loss += w * cross_entropy(&trace.logits, sample.label);

            let coef = w / n;
            let mut delta: Vec<f64> = softmax(&trace.logits)
                .into_iter()
                .enumerate()
                .map(|(c, p)| coef * (p - if c == sample.label { 1.0 } else { 0.0 }))
                .collect();

            for l in (1..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &trace.dense_inputs[l - 1];
                let gw = &mut grads.dense_weights[l - 1];
                for (i, &a) in input.iter().enumerate() {
                    if a != 0.0 {
                        let row = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
                        row.iter_mut().zip(&delta).for_each(|(g, d)| *g += a * d);
                    }
                }
                grads.biases[l]
                    .iter_mut()
                    .zip(&delta)
                    .for_each(|(g, d)| *g += d);

                let pre = &trace.pre_activations[l - 1];
                let mask = trace.masks.get(l - 1);
                delta = (0..layer.inputs)
                    .map(|i| {
                        let keep = mask.map_or(1.0, |m| m[i]);
                        if keep == 0.0 {
                            return 0.0;
                        }
                        let back: f64 = layer.row(i).iter().zip(&delta).map(|(w, d)| w * d).sum();
                        back * keep * act.derivative(pre[i])
                    })
                    .collect();
            }

            for &(i, v) in &trace.sparse_input {
                let row = grads
                    .sparse_rows
                    .entry(i)
                    .or_insert_with(|| vec![0.0; delta.len()]);
                row.iter_mut().zip(&delta).for_each(|(g, d)| *g += v * d);
            }
            grads.biases[0]
                .iter_mut()
                .zip(&delta)
                .for_each(|(g, d)| *g += d);
        }
        Ok((loss / n, grads))
    }
}

/// One optimizer step on the weighted cross-entropy of `batch` with dropout on.
/// Returns the pre-update loss.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Mlp,
    opt: &mut Adam,
    batch: &[Sample<'_>],
    rng: &mut R,
) -> Result<f64> {
    let (loss, grads) = model.loss_and_gradients(batch, Some(rng))?;
    if !loss.is_finite() {
        return Err(UstError::NonFiniteLoss {
            loss,
            step: opt.step_count() + 1,
        });
    }
    opt.step(model, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Unweighted mean cross-entropy, dropout off.
    pub loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

pub fn evaluate(model: &Mlp, samples: &[Sample<'_>]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(UstError::EmptyBatch);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let logits = model.logits(s.features)?;
        if s.label >= logits.len() {
            return Err(UstError::LabelOutOfRange {
                label: s.label,
                classes: logits.len(),
            });
        }
        loss += cross_entropy(&logits, s.label);
        correct += usize::from(argmax(&logits) == s.label);
    }
    let n = samples.len();
    Ok(Evaluation {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub valid_losses: Vec<f64>,
}

/// Shuffled mini-batch training with validation-loss checkpointing.
///
/// On return `model` holds the parameters of the epoch with the lowest
/// deterministic validation loss.
pub fn fit<R: Rng + ?Sized>(
    model: &mut Mlp,
    opt: &mut Adam,
    train: &[Sample<'_>],
    valid: &[Sample<'_>],
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitSummary> {
    if options.epochs == 0 || options.batch_size == 0 {
        return Err(UstError::InvalidConfig(
            "epochs and batch size must be positive".into(),
        ));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(UstError::EmptyBatch);
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(Mlp, usize, f64)> = None;
    let mut since_best = 0;
    let mut summary = FitSummary {
        best_epoch: 0,
        best_valid_loss: f64::INFINITY,
        epochs_run: 0,
        train_losses: Vec::with_capacity(options.epochs),
        valid_losses: Vec::with_capacity(options.epochs),
    };
    let mut batch = Vec::with_capacity(options.batch_size);

    for epoch in 1..=options.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(options.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            epoch_loss += train_step(model, opt, &batch, rng)? * chunk.len() as f64;
        }
        summary.train_losses.push(epoch_loss / train.len() as f64);
        let valid_loss = evaluate(model, valid)?.loss;
        summary.valid_losses.push(valid_loss);
        summary.epochs_run = epoch;

        if best.as_ref().is_none_or(|(_, _, l)| valid_loss < *l) {
            best = Some((model.clone(), epoch, valid_loss));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= options.patience {
                break;
            }
        }
    }

    let (snapshot, epoch, loss) = best.expect("at least one epoch ran");
    *model = snapshot;
    summary.best_epoch = epoch;
    summary.best_valid_loss = loss;
    Ok(summary)
}
