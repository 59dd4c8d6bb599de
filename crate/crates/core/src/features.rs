//! Sparse feature vectors and the hashed bag-of-words featurizer.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

/// Default hashing dimension (2^15).
pub const DEFAULT_DIM: usize = 1 << 15;

/// Sparse real vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a vector from unordered `(index, value)` pairs. Duplicate indices are
    /// summed; exact zeros are dropped.
    ///
    /// Panics if an index is outside `dim`.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!((i as usize) < dim, "index {i} out of range for dim {dim}");
            *acc.entry(i).or_insert(0.0) += v;
        }
        Self {
            dim,
            entries: acc.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_pairs(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i as u32, v)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .fold(0.0, |acc, &(_, v)| acc + v * v)
            .sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a of the UTF-8 bytes of `term`.
pub fn term_hash(term: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(term.as_bytes());
    h.finish()
}

/// Hashing-trick featurizer over word unigrams and bigrams.
///
/// Each term lands in bucket `hash % dim` with sign taken from the top hash bit.
/// The resulting term-frequency vector is l2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0 && dim <= u32::MAX as usize, "bad hashing dim {dim}");
        Self { dim }
    }

    fn bucket(&self, term: &str) -> (u32, f64) {
        let h = term_hash(term);
        let index = (h % self.dim as u64) as u32;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        (index, sign)
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        let tokens = tokenize(text);
        let unigrams = tokens.iter().map(|t| self.bucket(t));
        let bigrams = tokens
            .windows(2)
            .map(|w| self.bucket(&format!("{} {}", w[0], w[1])));
        let tf = SparseVector::from_pairs(self.dim, unigrams.chain(bigrams));
        let norm = tf.norm();
        if norm == 0.0 {
            return SparseVector::zeros(self.dim);
        }
        SparseVector {
            dim: self.dim,
            entries: tf.entries.into_iter().map(|(i, v)| (i, v / norm)).collect(),
        }
    }

    pub fn featurize_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<SparseVector> {
        use rayon::prelude::*;
        texts
            .par_iter()
            .map(|t| self.featurize(t.as_ref()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_vectors() {
        // published FNV-1a 64 test vectors
        assert_eq!(term_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(term_hash("a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(term_hash("foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let f = Featurizer::default();
        assert!(f.featurize("").is_zero());
        assert!(f.featurize("  ,,, !").is_zero());
    }

    #[test]
    fn featurize_is_pure() {
        let f = Featurizer::default();
        assert_eq!(f.featurize("A fine film."), f.featurize("A fine film."));
    }

    #[test]
    fn unit_norm_for_nonempty_text() {
        let f = Featurizer::default();
        let v = f.featurize("the plot was thin but the acting was strong");
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn word_order_only_changes_bigrams() {
        let f = Featurizer::default();
        let (g, _) = f.bucket("good");
        let (m, _) = f.bucket("movie");
        let (gm, _) = f.bucket("good movie");
        let (mg, _) = f.bucket("movie good");
        assert_ne!(gm, mg);
        let a = f.featurize("good movie");
        let b = f.featurize("movie good");
        assert_eq!(a.get(g).abs(), b.get(g).abs());
        assert_eq!(a.get(m).abs(), b.get(m).abs());
        assert!(a.get(gm) != 0.0 && a.get(mg) == 0.0);
        assert!(b.get(mg) != 0.0 && b.get(gm) == 0.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("Hello, WORLD!it's"),
            vec!["hello", "world", "it", "s"]
        );
    }

    #[test]
    fn from_pairs_merges_and_drops_zeros() {
        let v = SparseVector::from_pairs(8, [(3, 1.0), (1, 2.0), (3, -1.0), (5, 0.5)]);
        assert_eq!(v.entries(), &[(1, 2.0), (5, 0.5)]);
    }
}
