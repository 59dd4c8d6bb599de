//! Teacher/student self-training loop.
//!
//! The teacher is fit on the few labeled examples. Each round then samples an
//! unlabeled mini-pool, scores it with Monte-Carlo dropout, selects a subset
//! according to the [`SelectionPolicy`], attaches the voted pseudo-labels and
//! retrains the model on them, starting from the current parameters. With
//! confident learning on, each pseudo-labeled example's loss is scaled by
//! `ln(1 + 1 / (v + 1e-6))`, `v` being the teacher's predictive variance at the
//! voted class, and the weights are rescaled to mean one over the round.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{FewShotSplit, TestEvaluation};
use crate::error::{Result, UstError};
use crate::features::DEFAULT_DIM;
use crate::neural::{
    evaluate, fit, Adam, AdamConfig, FitOptions, FitSummary, Mlp, MlpConfig, Sample, SampleWeight,
};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::selection::{self, ClassTrace, ScoreScale, ScoredCandidate, SelectionPolicy, Strategy};
use crate::uncertainty::{estimate_batch, UncertaintyEstimate};

/// Guards the inverse variance when the teacher is unanimous.
pub const CONFIDENCE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    /// Labeled examples per class, for training and again for validation.
    pub k: usize,
    /// Stochastic forward passes per unlabeled example.
    pub passes: usize,
    /// Size of the unlabeled mini-pool scored each round.
    pub unlabeled_sample: usize,
    /// Selection strategy; `policy.budget` is the number selected per round.
    pub policy: SelectionPolicy,
    /// Maximum number of self-training rounds.
    pub iterations: usize,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub teacher_batch: usize,
    pub student_batch: usize,
    /// Rounds without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without validation improvement before a fit stops.
    pub epoch_patience: usize,
    pub confident_learning: bool,
    pub include_labeled_in_student: bool,
    pub lambda_labeled: f64,
    /// Re-initialize the student each round instead of copying the teacher.
    pub fresh_student: bool,
    pub hidden: usize,
    pub dropout: f64,
    pub feature_dim: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Evaluate the test set after every round (diagnostic curves only).
    pub track_test_curve: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            k: 30,
            passes: 30,
            unlabeled_sample: 16384,
            policy: SelectionPolicy {
                strategy: Strategy::Easy,
                class_dependent: true,
                budget: 4096,
                score_scale: ScoreScale::Normalized,
            },
            iterations: 25,
            teacher_epochs: 50,
            student_epochs: 25,
            teacher_batch: 4,
            student_batch: 32,
            patience: 5,
            epoch_patience: 10,
            confident_learning: true,
            include_labeled_in_student: false,
            lambda_labeled: 1.0,
            fresh_student: false,
            hidden: 128,
            dropout: 0.5,
            feature_dim: DEFAULT_DIM,
            optimizer: AdamConfig::default(),
            seed: 0,
            track_test_curve: false,
        }
    }
}

impl SelfTrainConfig {
    /// Uniform selection without confidence weights, retraining on the labeled
    /// set plus pseudo-labels.
    pub fn classic() -> Self {
        let mut cfg = Self::default();
        cfg.policy.strategy = Strategy::Uniform;
        cfg.policy.class_dependent = false;
        cfg.confident_learning = false;
        cfg.include_labeled_in_student = true;
        cfg
    }

    pub fn ust(strategy: Strategy) -> Self {
        let mut cfg = Self::default();
        cfg.policy.strategy = strategy;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UstError::InvalidConfig(m));
        let counts = [
            ("k", self.k),
            ("passes", self.passes),
            ("unlabeled_sample", self.unlabeled_sample),
            ("budget", self.policy.budget),
            ("teacher_epochs", self.teacher_epochs),
            ("student_epochs", self.student_epochs),
            ("teacher_batch", self.teacher_batch),
            ("student_batch", self.student_batch),
            ("hidden", self.hidden),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.policy.budget > self.unlabeled_sample {
            return bad(format!(
                "budget {} exceeds unlabeled sample size {}",
                self.policy.budget, self.unlabeled_sample
            ));
        }
        if !(self.lambda_labeled.is_finite() && self.lambda_labeled >= 0.0) {
            return bad("lambda_labeled must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn model_config(&self, classes: usize) -> MlpConfig {
        MlpConfig::single_hidden(self.feature_dim, self.hidden, classes, self.dropout)
    }

    fn teacher_fit(&self) -> FitOptions {
        FitOptions {
            epochs: self.teacher_epochs,
            batch_size: self.teacher_batch,
            patience: self.epoch_patience,
        }
    }

    fn student_fit(&self) -> FitOptions {
        FitOptions {
            epochs: self.student_epochs,
            batch_size: self.student_batch,
            patience: self.epoch_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 for the teacher, then consecutive from 1.
    pub round: usize,
    pub skipped: bool,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub pool_size: usize,
    pub selected_per_class: Vec<usize>,
    pub mean_bald_selected: f64,
    pub mean_confidence_weight: f64,
    pub selection_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_label_accuracy: Option<f64>,
    pub fit_epochs: usize,
    pub model_fingerprint: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub id: usize,
    pub label: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub trace: Vec<ClassTrace>,
    /// Exactly the pseudo-labeled examples the student was trained on.
    pub pseudo_labeled: Vec<PseudoLabel>,
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    /// Parameters with the lowest validation loss over the teacher and all rounds.
    pub model: Mlp,
    pub teacher: RoundRecord,
    pub teacher_fit: Option<FitSummary>,
    pub rounds: Vec<RoundRecord>,
    /// 0 when the teacher was never beaten.
    pub best_round: usize,
    pub best_valid_loss: f64,
    /// Set when a round failed; `rounds` then holds the completed ones.
    pub aborted: Option<String>,
}

/// Unnormalized confidence weight `ln(1 + 1 / (v + eps))`, or 1 when confident
/// learning is off.
pub fn confidence_weight(est: &UncertaintyEstimate, confident_learning: bool) -> SampleWeight {
    if !confident_learning {
        return SampleWeight::ONE;
    }
    let v = est.label_variance();
    SampleWeight::new((1.0 + 1.0 / (v + CONFIDENCE_EPSILON)).ln())
        .expect("log of a finite value above one")
}

/// Rescales to mean one. Equal weights become exactly one.
pub fn normalize_weights(weights: &mut [f64]) {
    if weights.is_empty() {
        return;
    }
    let first = weights[0];
    if weights.iter().all(|&w| w == first) {
        weights.iter_mut().for_each(|w| *w = 1.0);
        return;
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if mean > 0.0 {
        weights.iter_mut().for_each(|w| *w /= mean);
    }
}

/// Fits a freshly initialized model on the labeled set.
pub fn train_teacher(split: &FewShotSplit, cfg: &SelfTrainConfig) -> Result<(Mlp, FitSummary)> {
    cfg.validate()?;
    let mut model = Mlp::new(
        cfg.model_config(split.classes()),
        &mut derive_rng(cfg.seed, &[stream::TEACHER_INIT]),
    )?;
    let mut opt = Adam::new(&model, cfg.optimizer);
    let summary = fit(
        &mut model,
        &mut opt,
        &split.labeled_samples(),
        &split.validation_samples(),
        &cfg.teacher_fit(),
        &mut derive_rng(cfg.seed, &[stream::TEACHER_FIT]),
    )?;
    info!(
        "teacher: best epoch {} of {}, valid loss {:.4}",
        summary.best_epoch, summary.epochs_run, summary.best_valid_loss
    );
    Ok((model, summary))
}

fn diagnostic_test(
    split: &FewShotSplit,
    cfg: &SelfTrainConfig,
    model: &Mlp,
) -> Result<Option<f64>> {
    if cfg.track_test_curve && !split.test.is_empty() {
        Ok(Some(split.test.evaluate(model)?.accuracy))
    } else {
        Ok(None)
    }
}

fn base_record(
    round: usize,
    split: &FewShotSplit,
    cfg: &SelfTrainConfig,
    model: &Mlp,
) -> Result<RoundRecord> {
    let valid = evaluate(model, &split.validation_samples())?;
    Ok(RoundRecord {
        round,
        skipped: false,
        valid_loss: valid.loss,
        valid_accuracy: valid.accuracy,
        test_accuracy: diagnostic_test(split, cfg, model)?,
        pool_size: 0,
        selected_per_class: vec![0; split.classes()],
        mean_bald_selected: 0.0,
        mean_confidence_weight: 0.0,
        selection_fallback: false,
        pseudo_label_accuracy: None,
        fit_epochs: 0,
        model_fingerprint: model.fingerprint(),
    })
}

/// One self-training round. `model` is replaced by the retrained student.
pub fn run_round(
    model: &mut Mlp,
    split: &FewShotSplit,
    cfg: &SelfTrainConfig,
    round: usize,
) -> Result<RoundOutcome> {
    let classes = split.classes();
    let unlabeled = &split.unlabeled;
    if unlabeled.is_empty() {
        warn!("round {round}: empty unlabeled pool, skipping");
        let mut record = base_record(round, split, cfg, model)?;
        record.skipped = true;
        return Ok(RoundOutcome {
            record,
            trace: Vec::new(),
            pseudo_labeled: Vec::new(),
        });
    }

    let pool_size = cfg.unlabeled_sample.min(unlabeled.len());
    let mut positions = index::sample(
        &mut derive_rng(cfg.seed, &[stream::ROUND, round as u64, stream::POOL]),
        unlabeled.len(),
        pool_size,
    )
    .into_vec();
    positions.sort_unstable();

    let items: Vec<(usize, &crate::SparseVector)> = positions
        .iter()
        .map(|&p| (unlabeled[p].id, &unlabeled[p].features))
        .collect();
    let estimates = estimate_batch(
        model,
        &items,
        cfg.passes,
        derive_seed(cfg.seed, &[stream::ROUND, round as u64, stream::PASSES]),
    )?;
    let pool: Vec<ScoredCandidate> = items
        .iter()
        .zip(estimates)
        .map(|(&(id, _), estimate)| ScoredCandidate { id, estimate })
        .collect();

    let selection = selection::select(
        &pool,
        classes,
        &cfg.policy,
        &mut derive_rng(cfg.seed, &[stream::ROUND, round as u64, stream::SELECT]),
    )?;

    let mut weights: Vec<f64> = selection
        .chosen
        .iter()
        .map(|c| confidence_weight(&c.estimate, cfg.confident_learning).value())
        .collect();
    let mean_raw_weight = weights.iter().sum::<f64>() / weights.len().max(1) as f64;
    normalize_weights(&mut weights);

    let pseudo_labeled: Vec<PseudoLabel> = selection
        .chosen
        .iter()
        .zip(&weights)
        .map(|(c, &weight)| PseudoLabel {
            id: c.id,
            label: c.estimate.hard_label,
            weight,
        })
        .collect();

    let features_of = |id: usize| -> &crate::SparseVector {
        let p = unlabeled
            .binary_search_by_key(&id, |u| u.id)
            .expect("selected id comes from the unlabeled pool");
        &unlabeled[p].features
    };
    let mut train: Vec<Sample<'_>> = pseudo_labeled
        .iter()
        .map(|pl| {
            Ok(Sample::weighted(
                features_of(pl.id),
                pl.label,
                SampleWeight::new(pl.weight)?,
            ))
        })
        .collect::<Result<_>>()?;
    if cfg.include_labeled_in_student {
        let max_w = if weights.is_empty() {
            1.0
        } else {
            weights.iter().copied().fold(0.0, f64::max)
        };
        let w = SampleWeight::new(max_w * cfg.lambda_labeled)?;
        train.extend(
            split
                .labeled
                .iter()
                .map(|e| Sample::weighted(&e.features, e.label, w)),
        );
    }

    let mut selected_per_class = vec![0; classes];
    for pl in &pseudo_labeled {
        selected_per_class[pl.label] += 1;
    }
    let mean_bald_selected = selection
        .chosen
        .iter()
        .map(|c| c.estimate.bald)
        .sum::<f64>()
        / selection.chosen.len().max(1) as f64;

    let fit_epochs = if train.is_empty() {
        0
    } else {
        let mut student = if cfg.fresh_student {
            Mlp::new(
                model.config().clone(),
                &mut derive_rng(
                    cfg.seed,
                    &[stream::ROUND, round as u64, stream::STUDENT_INIT],
                ),
            )?
        } else {
            model.clone()
        };
        let mut opt = Adam::new(&student, cfg.optimizer);
        let summary = fit(
            &mut student,
            &mut opt,
            &train,
            &split.validation_samples(),
            &cfg.student_fit(),
            &mut derive_rng(
                cfg.seed,
                &[stream::ROUND, round as u64, stream::STUDENT_FIT],
            ),
        )?;
        *model = student;
        summary.epochs_run
    };

    let pairs: Vec<(usize, usize)> = pseudo_labeled.iter().map(|p| (p.id, p.label)).collect();
    let mut record = base_record(round, split, cfg, model)?;
    record.pool_size = pool_size;
    record.selected_per_class = selected_per_class;
    record.mean_bald_selected = mean_bald_selected;
    record.mean_confidence_weight = mean_raw_weight;
    record.selection_fallback = selection.trace.iter().any(|t| t.fell_back);
    record.pseudo_label_accuracy = split.hidden.pseudo_label_accuracy(&pairs);
    record.fit_epochs = fit_epochs;
    debug!(
        "round {round}: valid loss {:.4} acc {:.4}, pseudo-label acc {:?}",
        record.valid_loss, record.valid_accuracy, record.pseudo_label_accuracy
    );

    Ok(RoundOutcome {
        record,
        trace: selection.trace,
        pseudo_labeled,
    })
}

/// Trains a teacher and then self-trains from it.
pub fn run_self_training(
    split: &FewShotSplit,
    cfg: &SelfTrainConfig,
    sink: Option<&RunDir>,
) -> Result<SelfTrainOutcome> {
    let (teacher, summary) = train_teacher(split, cfg)?;
    let mut outcome = self_train_from(teacher, split, cfg, sink)?;
    outcome.teacher_fit = Some(summary);
    Ok(outcome)
}

/// Self-trains starting from an already fitted teacher.
pub fn self_train_from(
    teacher: Mlp,
    split: &FewShotSplit,
    cfg: &SelfTrainConfig,
    sink: Option<&RunDir>,
) -> Result<SelfTrainOutcome> {
    cfg.validate()?;
    let teacher_record = base_record(0, split, cfg, &teacher)?;
    if let Some(dir) = sink {
        dir.start(cfg, split)?;
        dir.append_round(&teacher_record)?;
    }
    let mut best = (teacher.clone(), 0, teacher_record.valid_loss);
    let mut current = teacher;
    let mut rounds = Vec::new();
    let mut aborted = None;
    let mut since_best = 0;

    for round in 1..=cfg.iterations {
        let outcome = match run_round(&mut current, split, cfg, round) {
            Ok(o) => o,
            Err(e) => {
                warn!("round {round} failed: {e}");
                aborted = Some(e.to_string());
                break;
            }
        };
        if let Some(dir) = sink {
            dir.append_round(&outcome.record)?;
            dir.append_trace(round, &outcome.trace)?;
        }
        let record = outcome.record;
        let skipped = record.skipped;
        if !skipped && record.valid_loss < best.2 {
            best = (current.clone(), round, record.valid_loss);
            since_best = 0;
        } else {
            since_best += 1;
        }
        rounds.push(record);
        if skipped {
            break;
        }
        if since_best >= cfg.patience {
            info!(
                "no validation improvement for {since_best} rounds; stopping after round {round}"
            );
            break;
        }
    }

    let (model, best_round, best_valid_loss) = best;
    if let Some(dir) = sink {
        dir.finish(&model, best_round, best_valid_loss)?;
    }
    Ok(SelfTrainOutcome {
        model,
        teacher: teacher_record,
        teacher_fit: None,
        rounds,
        best_round,
        best_valid_loss,
        aborted,
    })
}

/// File layout of a single self-training run.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub const CONFIG: &'static str = "config.json";
    pub const ROUNDS: &'static str = "rounds.jsonl";
    pub const TRACE: &'static str = "selection_trace.tsv";
    pub const MODEL: &'static str = "model.bin";
    pub const METRICS: &'static str = "metrics.json";
    pub const MANIFEST: &'static str = "split_manifest.tsv";

    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| UstError::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write_new(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.file(name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| UstError::io(&path, e))?);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| UstError::io(&path, e))
    }

    fn append(&self, name: &str, f: impl FnOnce(&mut File) -> std::io::Result<()>) -> Result<()> {
        let path = self.file(name);
        let mut file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| UstError::io(&path, e))?;
        f(&mut file).map_err(|e| UstError::io(&path, e))
    }

    fn start(&self, cfg: &SelfTrainConfig, split: &FewShotSplit) -> Result<()> {
        let config = serde_json::to_string_pretty(cfg)?;
        self.write_new(Self::CONFIG, |w| writeln!(w, "{config}"))?;
        self.write_new(Self::MANIFEST, |w| split.write_manifest(w))?;
        self.write_new(Self::ROUNDS, |_| Ok(()))?;
        self.write_new(Self::TRACE, |w| writeln!(w, "{}", selection::TRACE_HEADER))
    }

    fn append_round(&self, record: &RoundRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        self.append(Self::ROUNDS, |f| writeln!(f, "{line}"))
    }

    fn append_trace(&self, round: usize, trace: &[ClassTrace]) -> Result<()> {
        self.append(Self::TRACE, |f| {
            selection::write_trace(BufWriter::new(f), round, trace)
        })
    }

    fn finish(&self, model: &Mlp, best_round: usize, best_valid_loss: f64) -> Result<()> {
        model.save(self.file(Self::MODEL))?;
        let metrics = serde_json::json!({
            "best_round": best_round,
            "best_valid_loss": best_valid_loss,
            "model_fingerprint": model.fingerprint(),
        });
        self.write_new(Self::METRICS, |w| writeln!(w, "{metrics:#}"))
    }

    /// Adds the final test evaluation to `metrics.json`.
    pub fn record_test(&self, eval: &TestEvaluation) -> Result<()> {
        let path = self.file(Self::METRICS);
        let text = fs::read_to_string(&path).map_err(|e| UstError::io(&path, e))?;
        let mut metrics: serde_json::Value = serde_json::from_str(&text)?;
        metrics["test_accuracy"] = eval.accuracy.into();
        metrics["test_macro_f1"] = eval.macro_f1.into();
        self.write_new(Self::METRICS, |w| writeln!(w, "{metrics:#}"))
    }

    /// Reads back `rounds.jsonl`.
    pub fn read_rounds(path: &Path) -> Result<Vec<RoundRecord>> {
        let file = path.join(Self::ROUNDS);
        let text = fs::read_to_string(&file).map_err(|e| UstError::io(&file, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(UstError::from))
            .collect()
    }
}
