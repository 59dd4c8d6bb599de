//! Seeded synthetic corpora built from class-conditional vocabulary mixtures.
//!
//! Every class owns a list of cue words; all classes share a list of neutral
//! words. A document mixes neutral words with cue words, and each cue word
//! comes from the document's own class with probability `1 - overlap`. Word
//! frequencies inside each list are Zipfian, so a few dozen labeled documents
//! cover the frequent cues but leave the long tail to unlabeled data.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, LabeledText};
use crate::error::{Result, UstError};
use crate::rng::{derive_rng, stream, UstRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub cue_words_per_class: usize,
    pub neutral_words: usize,
    /// Probability that a cue word is borrowed from another class.
    pub overlap: f64,
    /// Per-document cue-word rate is uniform in this range.
    pub cue_rate: (f64, f64),
    /// Document length in words, inclusive range.
    pub length: (usize, usize),
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            train_size: 2000,
            test_size: 1000,
            cue_words_per_class: 800,
            neutral_words: 3000,
            overlap: 0.1,
            cue_rate: (0.0, 0.5),
            length: (6, 36),
            zipf_exponent: 1.0,
            seed: 2020,
        }
    }
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
    "ch", "dr", "fl", "gr", "kl", "pr", "sh", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou"];

fn fresh_word(rng: &mut UstRng, seen: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if rng.random_bool(0.3) {
            w.push_str(["n", "r", "s", "t", "l"].choose(rng).unwrap());
        }
        if seen.insert(w.clone()) {
            return w;
        }
    }
}

struct WordList {
    words: Vec<String>,
    freq: WeightedIndex<f64>,
}

impl WordList {
    fn new(size: usize, zipf: f64, rng: &mut UstRng, seen: &mut HashSet<String>) -> Self {
        let words: Vec<String> = (0..size).map(|_| fresh_word(rng, seen)).collect();
        let freq = WeightedIndex::new((1..=size).map(|r| (r as f64).powf(-zipf))).unwrap();
        Self { words, freq }
    }

    fn draw(&self, rng: &mut UstRng) -> &str {
        &self.words[self.freq.sample(rng)]
    }
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let bad = |m: &str| Err(UstError::InvalidConfig(format!("synthetic corpus: {m}")));
    if cfg.classes < 2 {
        return bad("need at least two classes");
    }
    if cfg.train_size == 0 || cfg.cue_words_per_class == 0 || cfg.neutral_words == 0 {
        return bad("sizes must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.overlap) {
        return bad("overlap outside [0, 1]");
    }
    let (lo, hi) = cfg.cue_rate;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return bad("cue_rate must satisfy 0 <= lo <= hi <= 1");
    }
    if cfg.length.0 == 0 || cfg.length.0 > cfg.length.1 {
        return bad("length must satisfy 1 <= min <= max");
    }
    Ok(())
}

/// Generates a balanced corpus. Identical configs give identical corpora.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    validate(cfg)?;
    let mut rng = derive_rng(cfg.seed, &[stream::CORPUS]);
    let mut seen = HashSet::new();
    let cues: Vec<WordList> = (0..cfg.classes)
        .map(|_| {
            WordList::new(
                cfg.cue_words_per_class,
                cfg.zipf_exponent,
                &mut rng,
                &mut seen,
            )
        })
        .collect();
    let neutral = WordList::new(cfg.neutral_words, cfg.zipf_exponent, &mut rng, &mut seen);

    let document = |label: usize, rng: &mut UstRng| -> LabeledText {
        let len = rng.random_range(cfg.length.0..=cfg.length.1);
        let rate = rng.random_range(cfg.cue_rate.0..=cfg.cue_rate.1);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random_bool(rate) {
                    let source = if rng.random_bool(cfg.overlap) {
                        let other = rng.random_range(0..cfg.classes - 1);
                        if other >= label {
                            other + 1
                        } else {
                            other
                        }
                    } else {
                        label
                    };
                    cues[source].draw(rng)
                } else {
                    neutral.draw(rng)
                }
            })
            .collect();
        LabeledText {
            text: words.join(" "),
            label,
        }
    };

    let part = |n: usize, rng: &mut UstRng| {
        let mut docs: Vec<LabeledText> = (0..n).map(|i| document(i % cfg.classes, rng)).collect();
        docs.shuffle(rng);
        docs
    };
    let train = part(cfg.train_size, &mut rng);
    let test = part(cfg.test_size, &mut rng);

    let class_names = if cfg.classes == 2 {
        vec!["positive".to_string(), "negative".to_string()]
    } else {
        (0..cfg.classes).map(|c| format!("class{c}")).collect()
    };
    // class indices follow first appearance when the files are reloaded
    let mut order: Vec<usize> = Vec::new();
    for ex in &train {
        if !order.contains(&ex.label) {
            order.push(ex.label);
        }
    }
    let remap: Vec<usize> = (0..cfg.classes)
        .map(|c| order.iter().position(|&o| o == c).unwrap())
        .collect();
    let relabel = |docs: Vec<LabeledText>| -> Vec<LabeledText> {
        docs.into_iter()
            .map(|d| LabeledText {
                label: remap[d.label],
                text: d.text,
            })
            .collect()
    };
    Ok(Corpus {
        class_names: order.iter().map(|&c| class_names[c].clone()).collect(),
        train: relabel(train),
        test: relabel(test),
    })
}
