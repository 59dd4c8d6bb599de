use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp};
use crate::error::{Result, UstError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with lazy updates on the sparse first layer.
///
/// Rows of the first weight matrix only receive a moment update on steps where
/// some example in the batch activates that input feature; every other
/// parameter is updated densely on every step. Bias correction uses the global
/// step count.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_bias: Vec<Vec<f64>>,
    v_bias: Vec<Vec<f64>>,
}

struct Moments {
    beta1: f64,
    beta2: f64,
    lr: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

impl Moments {
    #[inline]
    fn update(&self, p: &mut f64, m: &mut f64, v: &mut f64, g: f64) -> bool {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.bc1;
        let v_hat = *v / self.bc2;
        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        p.is_finite()
    }
}

impl Adam {
    pub fn new(model: &Mlp, config: AdamConfig) -> Self {
        let zeros_w = || {
            model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect::<Vec<_>>()
        };
        let zeros_b = || {
            model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m_weights: zeros_w(),
            v_weights: zeros_w(),
            m_bias: zeros_b(),
            v_bias: zeros_b(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn check_shapes(&self, model: &Mlp) -> Result<()> {
        let ok = self.m_weights.len() == model.layers().len()
            && model
                .layers()
                .iter()
                .zip(&self.m_weights)
                .zip(&self.m_bias)
                .all(|((l, mw), mb)| l.weights.len() == mw.len() && l.bias.len() == mb.len());
        if ok {
            Ok(())
        } else {
            Err(UstError::InvalidModel(
                "optimizer state does not match model shape".into(),
            ))
        }
    }

    /// Applies one update. Fails if any updated parameter becomes non-finite.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        self.check_shapes(model)?;
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let moments = Moments {
            beta1: c.beta1,
            beta2: c.beta2,
            lr: c.learning_rate,
            eps: c.epsilon,
            bc1: 1.0 - c.beta1.powi(t),
            bc2: 1.0 - c.beta2.powi(t),
        };
        let mut finite = true;

        let layers = model.layers_mut();
        let width = layers[0].outputs;
        {
            let (m, v) = (&mut self.m_weights[0], &mut self.v_weights[0]);
            let w = &mut layers[0].weights;
            for (&row, g) in &grads.sparse_rows {
                let base = row as usize * width;
                for (j, &gj) in g.iter().enumerate() {
                    let k = base + j;
                    finite &= moments.update(&mut w[k], &mut m[k], &mut v[k], gj);
                }
            }
        }
        for (l, layer) in layers.iter_mut().enumerate() {
            if l > 0 {
                let g = &grads.dense_weights[l - 1];
                let (m, v) = (&mut self.m_weights[l], &mut self.v_weights[l]);
                for k in 0..g.len() {
                    finite &= moments.update(&mut layer.weights[k], &mut m[k], &mut v[k], g[k]);
                }
            }
            let g = &grads.biases[l];
            let (m, v) = (&mut self.m_bias[l], &mut self.v_bias[l]);
            for k in 0..g.len() {
                finite &= moments.update(&mut layer.bias[k], &mut m[k], &mut v[k], g[k]);
            }
        }
        if finite {
            Ok(())
        } else {
            Err(UstError::NonFiniteParameters { step: self.step })
        }
    }
}
