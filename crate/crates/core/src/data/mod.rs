//! Corpora, featurization and few-shot splits.

mod corpus;
mod split;
pub mod synth;

pub use corpus::{
    load_corpus, load_labeled_file, Corpus, Format, LabelIndex, LabeledText, LoadStats,
};
pub use split::{
    few_shot_split, Example, FeaturizedCorpus, FewShotSplit, HiddenLabels, TestEvaluation, TestSet,
    UnlabeledExample,
};

pub use crate::features::{Featurizer, DEFAULT_DIM};

/// Featurizes `text` with the default hashing dimension.
pub fn featurize(text: &str) -> crate::features::SparseVector {
    Featurizer::default().featurize(text)
}
