//! Monte-Carlo dropout statistics.
//!
//! A [`PassMatrix`] holds the softmax outputs of `T` stochastic forward passes.
//! From it we derive the predictive mean, the per-class epistemic variance, the
//! BALD mutual information (entropy of the mean minus the mean entropy, in
//! nats) and the majority-vote hard label.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UstError};
use crate::features::SparseVector;
use crate::neural::{argmax, Mlp};
use crate::rng::{derive_rng, stream};

/// Default number of stochastic passes.
pub const DEFAULT_PASSES: usize = 30;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `T x C` matrix of per-pass class probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PassMatrix {
    passes: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl PassMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(UstError::InvalidPassMatrix("ragged rows".into()));
        }
        let passes = rows.len();
        Self::from_flat(passes, classes, rows.into_iter().flatten().collect())
    }

    pub fn from_flat(passes: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if passes == 0 {
            return Err(UstError::InvalidPassMatrix("need at least one pass".into()));
        }
        if classes < 2 {
            return Err(UstError::InvalidPassMatrix(
                "need at least two classes".into(),
            ));
        }
        if probs.len() != passes * classes {
            return Err(UstError::InvalidPassMatrix(format!(
                "{} values for a {passes}x{classes} matrix",
                probs.len()
            )));
        }
        for (t, row) in probs.chunks_exact(classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(UstError::InvalidPassMatrix(format!(
                    "row {t} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(UstError::InvalidPassMatrix(format!(
                    "row {t} sums to {sum}"
                )));
            }
        }
        Ok(Self {
            passes,
            classes,
            probs,
        })
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.classes)
    }

    fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[c])
    }

    fn rows_identical(&self) -> bool {
        let first = self.row(0);
        self.rows().all(|r| r == first)
    }
}

/// `T` independent stochastic passes, each with a fresh dropout mask.
pub fn run_passes<R: Rng + ?Sized>(
    model: &Mlp,
    features: &SparseVector,
    passes: usize,
    rng: &mut R,
) -> Result<PassMatrix> {
    if passes == 0 {
        return Err(UstError::InvalidPassMatrix("need at least one pass".into()));
    }
    let mut probs = Vec::with_capacity(passes * model.classes());
    for _ in 0..passes {
        probs.extend(model.forward_stochastic(features, rng)?);
    }
    PassMatrix::from_flat(passes, model.classes(), probs)
}

/// Column means.
pub fn predictive_mean(pm: &PassMatrix) -> Vec<f64> {
    let t = pm.passes as f64;
    (0..pm.classes)
        .map(|c| pm.column(c).sum::<f64>() / t)
        .collect()
}

/// Per-class population variance `mean(p^2) - mean(p)^2`, exactly zero for a
/// constant column and clamped at zero otherwise.
pub fn predictive_variance(pm: &PassMatrix) -> Vec<f64> {
    let t = pm.passes as f64;
    let mean = predictive_mean(pm);
    (0..pm.classes)
        .map(|c| {
            let first = pm.row(0)[c];
            if pm.column(c).all(|p| p == first) {
                return 0.0;
            }
            let second_moment = pm.column(c).map(|p| p * p).sum::<f64>() / t;
            let v = second_moment - mean[c] * mean[c];
            if v > 0.0 {
                v
            } else {
                0.0
            }
        })
        .collect()
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().fold(0.0, |acc, &v| acc - plogp(v))
}

/// BALD mutual information in nats, clamped into `[0, ln C]`.
pub fn bald_score(pm: &PassMatrix) -> f64 {
    if pm.rows_identical() {
        return 0.0;
    }
    let t = pm.passes as f64;
    let mean_entropy = pm.rows().map(entropy).sum::<f64>() / t;
    let b = entropy(&predictive_mean(pm)) - mean_entropy;
    if b > 0.0 {
        b.min((pm.classes as f64).ln())
    } else {
        0.0
    }
}

/// Majority vote over per-pass argmax labels. Ties at either level go to the
/// lowest class index. Returns `(label, fraction of passes voting for it)`.
pub fn vote_hard_label(pm: &PassMatrix) -> (usize, f64) {
    let mut votes = vec![0usize; pm.classes];
    for row in pm.rows() {
        votes[argmax(row)] += 1;
    }
    let mut label = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[label] {
            label = c;
        }
    }
    (label, votes[label] as f64 / pm.passes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub bald: f64,
    /// `bald / ln C`, in `[0, 1]`.
    pub bald_norm: f64,
    pub hard_label: usize,
    pub vote_margin: f64,
}

impl UncertaintyEstimate {
    pub fn from_passes(pm: &PassMatrix) -> Self {
        let bald = bald_score(pm);
        let (hard_label, vote_margin) = vote_hard_label(pm);
        Self {
            mean: predictive_mean(pm),
            variance: predictive_variance(pm),
            bald,
            bald_norm: (bald / (pm.classes as f64).ln()).clamp(0.0, 1.0),
            hard_label,
            vote_margin,
        }
    }

    pub fn classes(&self) -> usize {
        self.mean.len()
    }

    /// Variance of the voted class.
    pub fn label_variance(&self) -> f64 {
        self.variance[self.hard_label]
    }

    pub fn max_variance(&self) -> f64 {
        self.variance.iter().copied().fold(0.0, f64::max)
    }
}

pub fn estimate<R: Rng + ?Sized>(
    model: &Mlp,
    features: &SparseVector,
    passes: usize,
    rng: &mut R,
) -> Result<UncertaintyEstimate> {
    Ok(UncertaintyEstimate::from_passes(&run_passes(
        model, features, passes, rng,
    )?))
}

/// Estimates a batch in parallel. Example `id` uses the stream
/// `(seed, PASSES, id)`, so results do not depend on order or thread count.
pub fn estimate_batch(
    model: &Mlp,
    items: &[(usize, &SparseVector)],
    passes: usize,
    seed: u64,
) -> Result<Vec<UncertaintyEstimate>> {
    items
        .par_iter()
        .map(|&(id, x)| {
            let mut rng = derive_rng(seed, &[stream::PASSES, id as u64]);
            estimate(model, x, passes, &mut rng)
        })
        .collect()
}

/// Tab-separated dump: `id  label  margin  bald  max_variance`.
pub fn write_dump<W: Write>(
    mut w: W,
    rows: &[(usize, &UncertaintyEstimate)],
) -> std::io::Result<()> {
    writeln!(w, "id\tlabel\tmargin\tbald\tmax_variance")?;
    for (id, e) in rows {
        writeln!(
            w,
            "{id}\t{}\t{}\t{}\t{}",
            e.hard_label,
            e.vote_margin,
            e.bald,
            e.max_variance()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::MlpConfig;
    use crate::rng::seeded;

    fn pm(rows: &[&[f64]]) -> PassMatrix {
        PassMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(predictive_mean(&pm(&[&[0.3, 0.7]])), vec![0.3, 0.7]);
        assert_eq!(
            predictive_mean(&pm(&[&[1.0, 0.0], &[0.0, 1.0]])),
            vec![0.5, 0.5]
        );
        let m = predictive_mean(&pm(&[&[0.2, 0.8], &[0.6, 0.4]]));
        assert!((m[0] - 0.4).abs() < 1e-15 && (m[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(
            predictive_variance(&pm(&[&[0.2, 0.8], &[0.2, 0.8], &[0.2, 0.8]])),
            vec![0.0, 0.0]
        );
        let v = predictive_variance(&pm(&[&[0.2, 0.8], &[0.8, 0.2]]));
        assert!((v[0] - 0.09).abs() < 1e-12 && (v[1] - 0.09).abs() < 1e-12);
        let v = predictive_variance(&pm(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert_eq!(v, vec![0.25, 0.25]);
    }

    #[test]
    fn bald_examples() {
        assert_eq!(bald_score(&pm(&[&[0.3, 0.7], &[0.3, 0.7]])), 0.0);
        let b = bald_score(&pm(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!((b - 2f64.ln()).abs() < 1e-15);
        let u = [1.0 / 3.0; 3];
        assert_eq!(bald_score(&pm(&[&u, &u, &u])), 0.0);
    }

    #[test]
    fn vote_examples() {
        let (l, m) = vote_hard_label(&pm(&[&[0.9, 0.1], &[0.6, 0.4], &[0.3, 0.7]]));
        assert_eq!(l, 0);
        assert!((m - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(vote_hard_label(&pm(&[&[0.1, 0.2, 0.7]])), (2, 1.0));
        let r1 = [0.1, 0.8, 0.1];
        let r2 = [0.1, 0.1, 0.8];
        assert_eq!(vote_hard_label(&pm(&[&r1, &r1, &r2, &r2])), (1, 0.5));
        // per-pass tie goes to the lower index
        assert_eq!(vote_hard_label(&pm(&[&[0.5, 0.5]])).0, 0);
    }

    #[test]
    fn invalid_matrices_rejected() {
        assert!(PassMatrix::from_rows(vec![]).is_err());
        assert!(PassMatrix::from_rows(vec![vec![0.5, 0.6]]).is_err());
        assert!(PassMatrix::from_rows(vec![vec![1.2, -0.2]]).is_err());
        assert!(PassMatrix::from_rows(vec![vec![1.0]]).is_err());
        assert!(PassMatrix::from_rows(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
    }

    #[test]
    fn no_dropout_estimate_is_certain() {
        let model = Mlp::new(MlpConfig::single_hidden(10, 6, 3, 0.0), &mut seeded(1)).unwrap();
        let x = SparseVector::from_pairs(10, [(2, 0.6), (7, 0.8)]);
        let e = estimate(&model, &x, 30, &mut seeded(2)).unwrap();
        assert_eq!(e.bald, 0.0);
        assert_eq!(e.variance, vec![0.0; 3]);
        assert_eq!(e.hard_label, model.predict(&x).unwrap());
        assert_eq!(e.vote_margin, 1.0);
    }

    #[test]
    fn passes_are_seed_deterministic() {
        let model = Mlp::new(MlpConfig::single_hidden(10, 6, 3, 0.5), &mut seeded(1)).unwrap();
        let x = SparseVector::from_pairs(10, [(2, 0.6), (7, 0.8)]);
        let a = run_passes(&model, &x, 8, &mut seeded(3)).unwrap();
        let b = run_passes(&model, &x, 8, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert!(run_passes(&model, &x, 0, &mut seeded(3)).is_err());
    }

    #[test]
    fn batch_matches_sequential_streams() {
        let model = Mlp::new(MlpConfig::single_hidden(10, 6, 2, 0.5), &mut seeded(1)).unwrap();
        let xs: Vec<_> = (0..10u32)
            .map(|i| SparseVector::from_pairs(10, [(i, 1.0)]))
            .collect();
        let items: Vec<_> = xs.iter().enumerate().map(|(i, x)| (i * 3, x)).collect();
        let batch = estimate_batch(&model, &items, 5, 77).unwrap();
        let reversed: Vec<_> = items.iter().rev().copied().collect();
        let mut rev = estimate_batch(&model, &reversed, 5, 77).unwrap();
        rev.reverse();
        assert_eq!(batch, rev);
        let mut rng = derive_rng(77, &[stream::PASSES, 6]);
        assert_eq!(batch[2], estimate(&model, &xs[2], 5, &mut rng).unwrap());
    }

    #[test]
    fn dump_has_fixed_columns() {
        let e = UncertaintyEstimate::from_passes(&pm(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let mut out = Vec::new();
        write_dump(&mut out, &[(4, &e)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "id\tlabel\tmargin\tbald\tmax_variance");
        assert!(lines[1].starts_with("4\t0\t0.5\t0.693"));
        assert!(lines[1].ends_with("\t0.25"));
    }
}
