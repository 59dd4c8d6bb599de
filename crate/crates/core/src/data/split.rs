use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::info;
use rand::seq::SliceRandom;

use super::Corpus;
use crate::error::{Result, UstError};
use crate::features::{Featurizer, SparseVector};
use crate::neural::{argmax, Mlp, Sample};
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub features: SparseVector,
    pub label: usize,
}

impl Example {
    pub fn sample(&self) -> Sample<'_> {
        Sample::new(&self.features, self.label)
    }
}

/// An unlabeled example. There is deliberately no label field.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledExample {
    pub id: usize,
    pub features: SparseVector,
}

/// Featurized train and test partitions. Train ids are positions in `train`.
#[derive(Debug, Clone)]
pub struct FeaturizedCorpus {
    pub class_names: Vec<String>,
    pub featurizer: Featurizer,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl FeaturizedCorpus {
    pub fn new(corpus: &Corpus, featurizer: Featurizer) -> Self {
        let build = |part: &[super::LabeledText]| {
            let texts: Vec<&str> = part.iter().map(|e| e.text.as_str()).collect();
            featurizer
                .featurize_all(&texts)
                .into_iter()
                .zip(part)
                .enumerate()
                .map(|(id, (features, e))| Example {
                    id,
                    features,
                    label: e.label,
                })
                .collect()
        };
        Self {
            class_names: corpus.class_names.clone(),
            featurizer,
            train: build(&corpus.train),
            test: build(&corpus.test),
        }
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }
}

/// True labels of the unlabeled pool. Only aggregate scores are exposed.
#[derive(Debug, Clone, Default)]
pub struct HiddenLabels {
    labels: BTreeMap<usize, usize>,
}

impl HiddenLabels {
    /// Fraction of `(id, pseudo_label)` pairs that match the hidden label.
    pub fn pseudo_label_accuracy(&self, pseudo: &[(usize, usize)]) -> Option<f64> {
        if pseudo.is_empty() {
            return None;
        }
        let hits = pseudo
            .iter()
            .filter(|(id, label)| self.labels.get(id) == Some(label))
            .count();
        Some(hits as f64 / pseudo.len() as f64)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestEvaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Held-out test examples behind an access counter.
#[derive(Debug)]
pub struct TestSet {
    examples: Vec<Example>,
    touches: AtomicUsize,
}

impl Clone for TestSet {
    fn clone(&self) -> Self {
        Self {
            examples: self.examples.clone(),
            touches: AtomicUsize::new(self.touches()),
        }
    }
}

impl TestSet {
    pub fn new(examples: Vec<Example>) -> Self {
        Self {
            examples,
            touches: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of evaluations so far.
    pub fn touches(&self) -> usize {
        self.touches.load(Ordering::SeqCst)
    }

    pub fn evaluate(&self, model: &Mlp) -> Result<TestEvaluation> {
        self.touches.fetch_add(1, Ordering::SeqCst);
        if self.examples.is_empty() {
            return Err(UstError::Corpus("empty test partition".into()));
        }
        let classes = model.classes();
        let mut confusion = vec![vec![0usize; classes]; classes];
        for ex in &self.examples {
            let pred = argmax(&model.logits(&ex.features)?);
            if ex.label >= classes {
                return Err(UstError::LabelOutOfRange {
                    label: ex.label,
                    classes,
                });
            }
            confusion[ex.label][pred] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let f1s = (0..classes).map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let denom = predicted as f64 + actual as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        });
        Ok(TestEvaluation {
            accuracy: correct as f64 / self.examples.len() as f64,
            macro_f1: f1s.sum::<f64>() / classes as f64,
        })
    }
}

/// Few-shot partition of the training set plus the untouched test set.
#[derive(Debug, Clone)]
pub struct FewShotSplit {
    pub class_names: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub labeled: Vec<Example>,
    pub validation: Vec<Example>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub hidden: HiddenLabels,
    pub test: TestSet,
}

impl FewShotSplit {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labeled_samples(&self) -> Vec<Sample<'_>> {
        self.labeled.iter().map(Example::sample).collect()
    }

    pub fn validation_samples(&self) -> Vec<Sample<'_>> {
        self.validation.iter().map(Example::sample).collect()
    }

    /// Writes `partition<TAB>id` lines for every train example.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "partition\tid")?;
        for (name, ids) in [
            (
                "labeled",
                self.labeled.iter().map(|e| e.id).collect::<Vec<_>>(),
            ),
            ("validation", self.validation.iter().map(|e| e.id).collect()),
            ("unlabeled", self.unlabeled.iter().map(|e| e.id).collect()),
        ] {
            for id in ids {
                writeln!(w, "{name}\t{id}")?;
            }
        }
        Ok(())
    }
}

/// Seeded per-class shuffle: first `k` to the labeled set, next `k` to
/// validation, the rest (labels withheld) to the unlabeled pool.
pub fn few_shot_split(corpus: &FeaturizedCorpus, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(UstError::InvalidConfig("K must be positive".into()));
    }
    let classes = corpus.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (pos, ex) in corpus.train.iter().enumerate() {
        by_class[ex.label].push(pos);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 2 * k {
            return Err(UstError::InsufficientClass {
                class: corpus.class_names[c].clone(),
                available: members.len(),
                required: 2 * k,
            });
        }
    }

    let mut rng = derive_rng(seed, &[stream::SPLIT, k as u64]);
    let mut labeled = Vec::with_capacity(k * classes);
    let mut validation = Vec::with_capacity(k * classes);
    let mut rest = Vec::new();
    for members in &mut by_class {
        members.shuffle(&mut rng);
        labeled.extend(members[..k].iter().map(|&p| corpus.train[p].clone()));
        validation.extend(members[k..2 * k].iter().map(|&p| corpus.train[p].clone()));
        rest.extend_from_slice(&members[2 * k..]);
    }
    rest.sort_unstable();

    let mut hidden = HiddenLabels::default();
    let unlabeled = rest
        .into_iter()
        .map(|p| {
            let ex = &corpus.train[p];
            hidden.labels.insert(ex.id, ex.label);
            UnlabeledExample {
                id: ex.id,
                features: ex.features.clone(),
            }
        })
        .collect();
    info!(
        "split K={k} seed={seed}: {} labeled, {} validation, {} unlabeled",
        labeled.len(),
        validation.len(),
        hidden.len()
    );

    Ok(FewShotSplit {
        class_names: corpus.class_names.clone(),
        k,
        seed,
        labeled,
        validation,
        unlabeled,
        hidden,
        test: TestSet::new(corpus.test.clone()),
    })
}
