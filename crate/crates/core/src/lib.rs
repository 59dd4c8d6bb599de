//! Self-training for few-shot text classification, guided by Monte-Carlo dropout uncertainty.
//!
//! A small dropout MLP over hashed bag-of-words features is fine-tuned on a
//! handful of labeled examples per class (the teacher). Each self-training
//! round samples unlabeled texts, runs Monte-Carlo dropout passes to score
//! them by BALD, draws a pseudo-labeled subset (uniform, easy or hard, with
//! optional per-class budgets) and retrains the student with a loss weighted
//! by a decreasing function of the teacher's predictive variance.
//!
//! Module map:
//!
//! * [`features`] sparse vectors and text hashing
//! * [`neural`] the dropout classifier, losses and the Adam optimizer
//! * [`uncertainty`] Monte-Carlo dropout statistics (mean, variance, BALD, vote)
//! * [`selection`] easy / hard / uniform sampling of pseudo-labeled examples
//! * [`self_train`] the teacher/student loop
//! * [`data`] corpus loading, synthetic corpora and few-shot splits
//! * [`experiment`] multi-seed plans, ablation cells and reports

pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod neural;
pub mod rng;
pub mod selection;
pub mod self_train;
pub mod uncertainty;

pub use error::{Result, UstError};
pub use features::SparseVector;
pub use neural::{Adam, AdamConfig, FitOptions, Mlp, MlpConfig, Sample, SampleWeight};
pub use selection::{ScoredCandidate, SelectionPolicy, Strategy};
pub use self_train::{SelfTrainConfig, SelfTrainOutcome};
pub use uncertainty::{PassMatrix, UncertaintyEstimate};
