//! Multi-seed experiment plans, ablation cells and report files.
//!
//! A plan crosses a list of cells (method plus component toggles) with a list
//! of K values and seeds. For every `(K, seed)` one few-shot split and one
//! teacher are built and shared by all cells, so the `base` cell and round 0 of
//! every self-training cell see the same teacher. Each cell's selected model
//! touches the test set exactly once.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::synth::{self, SynthConfig};
use crate::data::{few_shot_split, load_corpus, FeaturizedCorpus, Featurizer, FewShotSplit};
use crate::error::{Result, UstError};
use crate::rng::derive_seed;
use crate::selection::Strategy;
use crate::self_train::{self_train_from, train_teacher, RoundRecord, RunDir, SelfTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Teacher only.
    Base,
    /// Uniform selection, no confidence weights, labeled data kept in the student.
    ClassicSt,
    UstEasy,
    UstHard,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::ClassicSt => "classic_st",
            Method::UstEasy => "ust_easy",
            Method::UstHard => "ust_hard",
        }
    }
}

/// A method plus optional component toggles, written `ust_easy-conf`,
/// `classic_st+class`, `ust_hard-class-conf+labeled` and so on.
///
/// Toggles: `conf` (confident learning), `class` (class-dependent selection),
/// `labeled` (keep the labeled set in the student's training data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cell {
    pub method: Method,
    pub confident: Option<bool>,
    pub class_dependent: Option<bool>,
    pub include_labeled: Option<bool>,
}

impl Cell {
    pub const fn new(method: Method) -> Self {
        Self {
            method,
            confident: None,
            class_dependent: None,
            include_labeled: None,
        }
    }

    pub fn without_confident(mut self) -> Self {
        self.confident = Some(false);
        self
    }

    pub fn without_class_dependent(mut self) -> Self {
        self.class_dependent = Some(false);
        self
    }

    pub fn is_base(&self) -> bool {
        self.method == Method::Base
    }

    /// The self-training configuration for this cell on top of `base`.
    pub fn config(&self, base: &SelfTrainConfig) -> SelfTrainConfig {
        let mut cfg = base.clone();
        match self.method {
            Method::Base | Method::ClassicSt => {
                cfg.policy.strategy = Strategy::Uniform;
                cfg.policy.class_dependent = false;
                cfg.confident_learning = false;
                cfg.include_labeled_in_student = true;
            }
            Method::UstEasy | Method::UstHard => {
                cfg.policy.strategy = if self.method == Method::UstEasy {
                    Strategy::Easy
                } else {
                    Strategy::Hard
                };
                cfg.policy.class_dependent = true;
                cfg.confident_learning = true;
            }
        }
        if let Some(v) = self.confident {
            cfg.confident_learning = v;
        }
        if let Some(v) = self.class_dependent {
            cfg.policy.class_dependent = v;
        }
        if let Some(v) = self.include_labeled {
            cfg.include_labeled_in_student = v;
        }
        cfg
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method.as_str())?;
        for (flag, name) in [
            (self.class_dependent, "class"),
            (self.confident, "conf"),
            (self.include_labeled, "labeled"),
        ] {
            if let Some(on) = flag {
                write!(f, "{}{name}", if on { '+' } else { '-' })?;
            }
        }
        Ok(())
    }
}

impl FromStr for Cell {
    type Err = UstError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s.find(['+', '-']).unwrap_or(s.len());
        let method = match &s[..split] {
            "base" => Method::Base,
            "classic_st" | "classic" => Method::ClassicSt,
            "ust_easy" | "ust" => Method::UstEasy,
            "ust_hard" => Method::UstHard,
            other => return Err(UstError::InvalidConfig(format!("unknown method {other:?}"))),
        };
        let mut cell = Cell::new(method);
        let mut rest = &s[split..];
        while let Some(sign) = rest.chars().next() {
            let on = sign == '+';
            let body = &rest[1..];
            let end = body.find(['+', '-']).unwrap_or(body.len());
            match &body[..end] {
                "conf" => cell.confident = Some(on),
                "class" => cell.class_dependent = Some(on),
                "labeled" => cell.include_labeled = Some(on),
                other => {
                    return Err(UstError::InvalidConfig(format!(
                        "unknown toggle {other:?} in cell {s:?}"
                    )))
                }
            }
            rest = &body[end..];
        }
        Ok(cell)
    }
}

impl TryFrom<String> for Cell {
    type Error = UstError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Cell> for String {
    fn from(c: Cell) -> String {
        c.to_string()
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const K_SWEEP: [usize; 6] = [20, 30, 50, 100, 500, 1000];

/// Experiment plan, usually read from a TOML file:
///
/// ```toml
/// corpus = "data/toy"   # omit for the bundled synthetic corpus
/// cells = ["base", "classic_st", "ust_easy", "ust_easy-conf"]
/// k = [30]
/// seeds = [0, 1, 2, 3, 4]
///
/// [config]
/// unlabeled_sample = 2048
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub corpus: PathBuf,
    pub cells: Vec<Cell>,
    pub k: Vec<usize>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub config: SelfTrainConfig,
    /// Run `(K, seed)` jobs on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            cells: ablation_cells(),
            k: vec![30],
            seeds: DEFAULT_SEEDS.to_vec(),
            master_seed: 0,
            config: SelfTrainConfig::default(),
            parallel: true,
        }
    }
}

/// Base, classic ST, and UST easy/hard with each component removed in turn.
pub fn ablation_cells() -> Vec<Cell> {
    let easy = Cell::new(Method::UstEasy);
    let hard = Cell::new(Method::UstHard);
    vec![
        Cell::new(Method::Base),
        Cell::new(Method::ClassicSt),
        easy,
        easy.without_class_dependent(),
        easy.without_confident(),
        hard,
        hard.without_class_dependent(),
        hard.without_confident(),
    ]
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UstError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UstError::io(path, e))?;
        let mut plan = Self::from_toml(&text)?;
        if plan.corpus.is_relative() && !plan.corpus.as_os_str().is_empty() {
            if let Some(parent) = path.parent() {
                plan.corpus = parent.join(&plan.corpus);
            }
        }
        Ok(plan)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| UstError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(UstError::InvalidConfig(
                "plan needs at least one seed".into(),
            ));
        }
        if self.cells.is_empty() || self.k.is_empty() {
            return Err(UstError::InvalidConfig(
                "plan needs cells and K values".into(),
            ));
        }
        self.config.validate()
    }

    /// Seed for every random stream of the `(K, seed)` job. Cells are not part
    /// of the key, so all cells of a job share split, teacher and round streams.
    pub fn job_seed(&self, k: usize, seed: u64) -> u64 {
        derive_seed(self.master_seed, &[k as u64, seed])
    }
}

/// One `(cell, K, seed)` result; one line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub cell: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub test_accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub best_round: usize,
    pub teacher_valid_loss: f64,
    pub teacher_valid_accuracy: f64,
    pub teacher_fingerprint: u64,
    pub model_fingerprint: u64,
    pub rounds: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Test-set access count of one `(K, seed)` job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestAudit {
    pub k: usize,
    pub seed: u64,
    pub touches: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<SeedResult>,
    pub audits: Vec<TestAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub k: usize,
    pub accuracies: Vec<f64>,
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub std: Option<f64>,
    pub macro_f1_mean: Option<f64>,
    pub failed: usize,
}

impl CellSummary {
    /// `"88.19 (1.01)"`, percentages with the seed std in parentheses.
    pub fn formatted(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{:.2} ({:.2})", 100.0 * m, 100.0 * s),
            (Some(m), None) => format!("{:.2}", 100.0 * m),
            _ => "failed".to_string(),
        }
    }
}

pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

impl RunReport {
    pub fn any_failed(&self) -> bool {
        self.records.iter().any(|r| r.error.is_some())
    }

    pub fn audit_passed(&self) -> bool {
        self.audits.iter().all(|a| a.touches == a.expected)
    }

    fn cell_order(&self) -> Vec<String> {
        let mut order: Vec<String> = Vec::new();
        for r in &self.records {
            if !order.contains(&r.cell) {
                order.push(r.cell.clone());
            }
        }
        order
    }

    fn k_values(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.records.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn summary(&self, cell: &str, k: usize) -> CellSummary {
        let rows: Vec<&SeedResult> = self
            .records
            .iter()
            .filter(|r| r.cell == cell && r.k == k)
            .collect();
        let accuracies: Vec<f64> = rows.iter().filter_map(|r| r.test_accuracy).collect();
        let f1: Vec<f64> = rows.iter().filter_map(|r| r.macro_f1).collect();
        let (mean, std) = mean_std(&accuracies);
        CellSummary {
            cell: cell.to_string(),
            k,
            accuracies,
            mean,
            std,
            macro_f1_mean: mean_std(&f1).0,
            failed: rows.iter().filter(|r| r.error.is_some()).count(),
        }
    }

    pub fn summaries(&self) -> Vec<CellSummary> {
        let ks = self.k_values();
        self.cell_order()
            .iter()
            .flat_map(|c| ks.iter().map(move |&k| (c, k)))
            .map(|(c, k)| self.summary(c, k))
            .collect()
    }

    /// Plain-text table: one row per cell, one accuracy column per K, then
    /// macro-F1 diagnostic columns.
    pub fn table(&self) -> String {
        let ks = self.k_values();
        let mut header = vec!["cell".to_string()];
        header.extend(ks.iter().map(|k| format!("K={k}")));
        header.extend(ks.iter().map(|k| format!("macro-F1 K={k}")));
        let mut rows = vec![header];
        for cell in self.cell_order() {
            let mut row = vec![cell.clone()];
            let sums: Vec<CellSummary> = ks.iter().map(|&k| self.summary(&cell, k)).collect();
            row.extend(sums.iter().map(CellSummary::formatted));
            row.extend(sums.iter().map(|s| {
                s.macro_f1_mean
                    .map_or_else(|| "-".to_string(), |f| format!("{:.2}", 100.0 * f))
            }));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, &w))| {
                    if i == 0 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Per-round validation (and, when tracked, test) accuracy averaged over
    /// seeds, as CSV with rounds `1..=N`.
    pub fn curve_csv(&self, cell: &str, k: usize) -> String {
        let rows: Vec<&SeedResult> = self
            .records
            .iter()
            .filter(|r| r.cell == cell && r.k == k)
            .collect();
        let max_round = rows.iter().map(|r| r.rounds.len()).max().unwrap_or(0);
        let mut out = String::from("round,seeds,mean_valid_accuracy,mean_test_accuracy");
        for r in &rows {
            out.push_str(&format!(",valid_seed{}", r.seed));
        }
        out.push('\n');
        for round in 1..=max_round {
            let at: Vec<Option<&RoundRecord>> = rows
                .iter()
                .map(|r| r.rounds.iter().find(|rr| rr.round == round))
                .collect();
            let valid: Vec<f64> = at.iter().flatten().map(|r| r.valid_accuracy).collect();
            let test: Vec<f64> = at
                .iter()
                .flatten()
                .filter_map(|r| r.test_accuracy)
                .collect();
            let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
            out.push_str(&format!(
                "{round},{},{},{}",
                valid.len(),
                fmt(mean_std(&valid).0),
                fmt(mean_std(&test).0)
            ));
            for r in &at {
                out.push(',');
                out.push_str(&fmt(r.map(|r| r.valid_accuracy)));
            }
            out.push('\n');
        }
        out
    }

    pub fn results_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_results_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            records,
            audits: Vec::new(),
        })
    }
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TABLE_FILE: &str = "table.txt";
pub const CURVES_DIR: &str = "curves";

/// Writes `results.jsonl`, `table.txt` and `curves/<cell>_K<k>.csv`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let curves = dir.join(CURVES_DIR);
    fs::create_dir_all(&curves).map_err(|e| UstError::io(&curves, e))?;
    let write = |path: PathBuf, body: &str| -> Result<PathBuf> {
        let mut w = BufWriter::new(File::create(&path).map_err(|e| UstError::io(&path, e))?);
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| UstError::io(&path, e))?;
        Ok(path)
    };
    let mut written = vec![
        write(dir.join(RESULTS_FILE), &report.results_jsonl()?)?,
        write(dir.join(TABLE_FILE), &report.table())?,
    ];
    for s in report.summaries() {
        if s.cell == Cell::new(Method::Base).to_string() {
            continue;
        }
        let name = format!("{}_K{}.csv", s.cell, s.k);
        written.push(write(curves.join(name), &report.curve_csv(&s.cell, s.k))?);
    }
    Ok(written)
}

fn failed(cell: &Cell, k: usize, seed: u64, err: &UstError) -> SeedResult {
    SeedResult {
        cell: cell.to_string(),
        k,
        seed,
        test_accuracy: None,
        macro_f1: None,
        best_round: 0,
        teacher_valid_loss: f64::NAN,
        teacher_valid_accuracy: f64::NAN,
        teacher_fingerprint: 0,
        model_fingerprint: 0,
        rounds: Vec::new(),
        error: Some(err.to_string()),
    }
}

fn run_job(
    plan: &ExperimentPlan,
    corpus: &FeaturizedCorpus,
    k: usize,
    seed: u64,
    out: Option<&Path>,
) -> (Vec<SeedResult>, Option<TestAudit>) {
    let job_seed = plan.job_seed(k, seed);
    let mut base = plan.config.clone();
    base.k = k;
    base.seed = job_seed;

    let prepared = few_shot_split(corpus, k, job_seed)
        .and_then(|split| train_teacher(&split, &base).map(|t| (split, t)));
    let (split, (teacher, _)) = match prepared {
        Ok(p) => p,
        Err(e) => {
            error!("K={k} seed={seed}: {e}");
            return (
                plan.cells.iter().map(|c| failed(c, k, seed, &e)).collect(),
                None,
            );
        }
    };

    let mut results = Vec::with_capacity(plan.cells.len());
    for cell in &plan.cells {
        let res = run_cell(cell, &split, &teacher, &base, k, seed, out);
        results.push(res.unwrap_or_else(|e| {
            error!("{cell} K={k} seed={seed}: {e}");
            failed(cell, k, seed, &e)
        }));
    }
    let audit = (!plan.config.track_test_curve).then(|| TestAudit {
        k,
        seed,
        touches: split.test.touches(),
        expected: results.iter().filter(|r| r.test_accuracy.is_some()).count(),
    });
    (results, audit)
}

fn run_cell(
    cell: &Cell,
    split: &FewShotSplit,
    teacher: &crate::Mlp,
    base: &SelfTrainConfig,
    k: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<SeedResult> {
    let teacher_valid = crate::neural::evaluate(teacher, &split.validation_samples())?;
    let mut result = SeedResult {
        cell: cell.to_string(),
        k,
        seed,
        test_accuracy: None,
        macro_f1: None,
        best_round: 0,
        teacher_valid_loss: teacher_valid.loss,
        teacher_valid_accuracy: teacher_valid.accuracy,
        teacher_fingerprint: teacher.fingerprint(),
        model_fingerprint: teacher.fingerprint(),
        rounds: Vec::new(),
        error: None,
    };
    let cfg = cell.config(base);
    let run_dir = out
        .map(|o| {
            RunDir::create(
                o.join("runs")
                    .join(cell.to_string())
                    .join(format!("K{k}"))
                    .join(format!("seed{seed}")),
            )
        })
        .transpose()?;

    let selected = if cell.is_base() {
        teacher.clone()
    } else {
        let outcome = self_train_from(teacher.clone(), split, &cfg, run_dir.as_ref())?;
        if let Some(msg) = outcome.aborted {
            result.error = Some(msg);
        }
        result.best_round = outcome.best_round;
        result.rounds = outcome.rounds;
        outcome.model
    };
    result.model_fingerprint = selected.fingerprint();
    let eval = split.test.evaluate(&selected)?;
    result.test_accuracy = Some(eval.accuracy);
    result.macro_f1 = Some(eval.macro_f1);
    if let (Some(dir), false) = (&run_dir, cell.is_base()) {
        dir.record_test(&eval)?;
    }
    info!(
        "{cell} K={k} seed={seed}: test accuracy {:.4}",
        eval.accuracy
    );
    Ok(result)
}

/// Runs every `(cell, K, seed)` of the plan on an already featurized corpus.
pub fn run_plan_on(
    plan: &ExperimentPlan,
    corpus: &FeaturizedCorpus,
    out: Option<&Path>,
) -> Result<RunReport> {
    plan.validate()?;
    if corpus.test.is_empty() {
        return Err(UstError::Corpus("corpus has no test partition".into()));
    }
    let jobs: Vec<(usize, u64)> = plan
        .k
        .iter()
        .flat_map(|&k| plan.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let outputs: Vec<_> = if plan.parallel {
        jobs.par_iter()
            .map(|&(k, s)| run_job(plan, corpus, k, s, out))
            .collect()
    } else {
        jobs.iter()
            .map(|&(k, s)| run_job(plan, corpus, k, s, out))
            .collect()
    };

    let mut report = RunReport::default();
    // group by cell in plan order, then K, then seed
    let mut by_cell: BTreeMap<usize, Vec<SeedResult>> = BTreeMap::new();
    for (results, audit) in outputs {
        for (i, r) in results.into_iter().enumerate() {
            by_cell.entry(i).or_default().push(r);
        }
        report.audits.extend(audit);
    }
    report.records = by_cell.into_values().flatten().collect();
    Ok(report)
}

/// Loads and featurizes the plan's corpus, then runs the plan. An empty
/// corpus path selects the bundled synthetic corpus.
pub fn run_plan(plan: &ExperimentPlan, out: Option<&Path>) -> Result<RunReport> {
    plan.validate()?;
    let corpus = if plan.corpus.as_os_str().is_empty() {
        info!("no corpus given; using the default synthetic corpus");
        synth::generate(&SynthConfig::default())?
    } else {
        let (corpus, stats) = load_corpus(&plan.corpus, None)?;
        info!(
            "loaded {} ({} examples, {} skipped, {} classes)",
            plan.corpus.display(),
            stats.loaded,
            stats.skipped,
            corpus.classes()
        );
        corpus
    };
    let featurized = FeaturizedCorpus::new(&corpus, Featurizer::new(plan.config.feature_dim));
    run_plan_on(plan, &featurized, out)
}
