//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use ust::features::SparseVector;
use ust::rng::{seeded, UstRng};
use ust::uncertainty::PassMatrix;
use ust::{Mlp, MlpConfig, Sample, SampleWeight};

/// Random probability rows; some matrices get duplicated or one-hot rows.
pub fn random_rows<R: Rng>(rng: &mut R, passes: usize, classes: usize) -> Vec<Vec<f64>> {
    let kind = rng.random_range(0..4);
    let mut rows: Vec<Vec<f64>> = (0..passes)
        .map(|_| {
            let raw: Vec<f64> = (0..classes)
                .map(|_| rng.random::<f64>().powi(3) + 1e-12)
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    match kind {
        0 => {
            let first = rows[0].clone();
            rows.iter_mut().for_each(|r| *r = first.clone());
        }
        1 => {
            let c = rng.random_range(0..classes);
            let t = rng.random_range(0..passes);
            rows[t] = (0..classes)
                .map(|j| if j == c { 1.0 } else { 0.0 })
                .collect();
        }
        _ => {}
    }
    rows
}

pub fn random_matrix<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, PassMatrix) {
    let passes = rng.random_range(1..=10);
    let classes = rng.random_range(2..=6);
    let rows = random_rows(rng, passes, classes);
    let pm = PassMatrix::from_rows(rows.clone()).expect("valid rows");
    (rows, pm)
}

/// `-sum_c pbar_c ln pbar_c + (1/T) sum_t sum_c p_tc ln p_tc`, term by term.
pub fn brute_bald(rows: &[Vec<f64>]) -> f64 {
    let t = rows.len();
    let c = rows[0].len();
    let mut first = 0.0;
    for j in 0..c {
        let mut pbar = 0.0;
        for row in rows {
            pbar += row[j];
        }
        pbar /= t as f64;
        if pbar > 0.0 {
            first -= pbar * pbar.ln();
        }
    }
    let mut second = 0.0;
    for row in rows {
        for &p in row {
            if p > 0.0 {
                second += p * p.ln();
            }
        }
    }
    (first + second / t as f64).clamp(0.0, (c as f64).ln())
}

/// Two-pass population variance per class.
pub fn brute_variance(rows: &[Vec<f64>]) -> Vec<f64> {
    let t = rows.len() as f64;
    (0..rows[0].len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / t;
            rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / t
        })
        .collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Dense forward pass without dropout, written directly from the layer arrays.
pub fn reference_logits(model: &Mlp, x: &SparseVector) -> Vec<f64> {
    let mut h = x.to_dense();
    let layers = model.layers();
    for (n, layer) in layers.iter().enumerate() {
        let mut z = layer.bias.clone();
        for (i, &xi) in h.iter().enumerate() {
            if xi != 0.0 {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += xi * layer.weights[i * layer.outputs + j];
                }
            }
        }
        if n + 1 < layers.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = z;
    }
    h
}

/// Batch mean of `weight * cross_entropy`, with a log-sum-exp softmax.
pub fn reference_loss(model: &Mlp, batch: &[Sample<'_>]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let z = reference_logits(model, s.features);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += s.weight.value() * (lse - z[s.label]);
    }
    total / batch.len() as f64
}

pub fn random_sparse<R: Rng>(rng: &mut R, dim: usize, nnz: usize) -> SparseVector {
    let pairs: Vec<(u32, f64)> = (0..nnz)
        .map(|_| (rng.random_range(0..dim) as u32, rng.random_range(-1.0..1.0)))
        .collect();
    SparseVector::from_pairs(dim, pairs)
}

fn param_mut(model: &mut Mlp, layer: usize, bias: bool, idx: usize) -> &mut f64 {
    let l = &mut model.layers_mut()[layer];
    if bias {
        &mut l.bias[idx]
    } else {
        &mut l.weights[idx]
    }
}

/// Relative error of analytic against central-difference gradients on a
/// random small model; returns `(coordinates checked, worst relative error)`.
pub fn gradient_check(model_seed: u64) -> (usize, f64) {
    let mut rng = seeded(model_seed);
    let inputs = rng.random_range(5..30);
    let hidden = rng.random_range(3..10);
    let classes = rng.random_range(2..5);
    let mut model = Mlp::new(
        MlpConfig::single_hidden(inputs, hidden, classes, 0.0),
        &mut rng,
    )
    .unwrap();
    for layer in model.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let xs: Vec<SparseVector> = (0..6).map(|_| random_sparse(&mut rng, inputs, 4)).collect();
    let batch: Vec<Sample> = xs
        .iter()
        .map(|x| {
            let w = SampleWeight::new(rng.random_range(0.2..3.0)).unwrap();
            Sample::weighted(x, rng.random_range(0..classes), w)
        })
        .collect();
    let (_, grads) = model.loss_and_gradients::<UstRng>(&batch, None).unwrap();

    let h = 1e-6;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for layer in 0..model.layers().len() {
        let n_w = model.layers()[layer].weights.len();
        let width = model.layers()[layer].outputs;
        let n_b = model.layers()[layer].bias.len();
        for _ in 0..8 {
            let (is_bias, idx) = if rng.random_bool(0.25) {
                (true, rng.random_range(0..n_b))
            } else {
                (false, rng.random_range(0..n_w))
            };
            let original = *param_mut(&mut model, layer, is_bias, idx);
            *param_mut(&mut model, layer, is_bias, idx) = original + h;
            let plus = reference_loss(&model, &batch);
            *param_mut(&mut model, layer, is_bias, idx) = original - h;
            let minus = reference_loss(&model, &batch);
            *param_mut(&mut model, layer, is_bias, idx) = original;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = if is_bias {
                grads.biases[layer][idx]
            } else {
                grads.weight(layer, idx, width)
            };
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-7 {
                assert!((analytic - numeric).abs() < 1e-7);
                continue;
            }
            let rel = (analytic - numeric).abs() / scale;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (checked, worst)
}
