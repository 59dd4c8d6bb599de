//! Acceptance suite. Prints one line per criterion and exits non-zero when a
//! hard criterion fails. Criterion 8 is soft and only warns.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use ust::data::synth::{generate, SynthConfig};
use ust::data::{few_shot_split, FeaturizedCorpus, Featurizer};
use ust::experiment::{emit_report, run_plan_on, Cell, ExperimentPlan, RunReport, RESULTS_FILE};
use ust::rng::seeded;
use ust::selection::{sample_without_replacement, selection_weights, ScoreScale};
use ust::self_train::{self_train_from, train_teacher};
use ust::uncertainty::{bald_score, predictive_variance, PassMatrix};
use ust::{ScoredCandidate, SelfTrainConfig, Strategy, UncertaintyEstimate};

use common::{brute_bald, brute_variance, gradient_check, random_matrix};

enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Line {
    id: u8,
    name: &'static str,
    verdict: Verdict,
    detail: String,
}

fn hard(id: u8, name: &'static str, ok: bool, detail: String) -> Line {
    let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
    Line {
        id,
        name,
        verdict,
        detail,
    }
}

fn bald_oracle() -> Line {
    let start = Instant::now();
    let mut rng = seeded(1);
    let mut worst: f64 = 0.0;
    let mut bounded = true;
    for _ in 0..1000 {
        let (rows, pm) = random_matrix(&mut rng);
        let b = bald_score(&pm);
        worst = worst.max((b - brute_bald(&rows)).abs());
        bounded &= (0.0..=(pm.classes() as f64).ln()).contains(&b);
    }
    let secs = start.elapsed().as_secs_f64();
    hard(
        1,
        "BALD oracle equivalence",
        worst < 1e-12 && bounded && secs < 5.0,
        format!("max |diff| {worst:.2e} over 1000 matrices, bounds hold: {bounded}, {secs:.2}s"),
    )
}

fn variance_oracle() -> Line {
    let mut rng = seeded(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (rows, pm) = random_matrix(&mut rng);
        for (v, r) in predictive_variance(&pm).iter().zip(brute_variance(&rows)) {
            worst = worst.max((v - r).abs());
        }
    }
    let mut exact_zero = true;
    for _ in 0..200 {
        let (rows, _) = random_matrix(&mut rng);
        let same = PassMatrix::from_rows(vec![rows[0].clone(); rows.len() + 1]).unwrap();
        exact_zero &=
            predictive_variance(&same).iter().all(|&v| v == 0.0) && bald_score(&same) == 0.0;
    }
    hard(
        2,
        "variance oracle",
        worst < 1e-12 && exact_zero,
        format!("max |diff| {worst:.2e}, identical rows give exact zero: {exact_zero}"),
    )
}

fn gradients() -> Line {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20 {
        let (n, w) = gradient_check(1000 + seed);
        checked += n;
        worst = worst.max(w);
    }
    let secs = start.elapsed().as_secs_f64();
    hard(
        3,
        "gradient correctness",
        worst < 1e-4 && secs < 10.0,
        format!("20 models, {checked} coordinates, max relative error {worst:.2e}, {secs:.2}s"),
    )
}

fn candidate(bald_norm: f64) -> ScoredCandidate {
    ScoredCandidate {
        id: 0,
        estimate: UncertaintyEstimate {
            mean: vec![0.5, 0.5],
            variance: vec![0.0, 0.0],
            bald: bald_norm * 2f64.ln(),
            bald_norm,
            hard_label: 0,
            vote_margin: 1.0,
        },
    }
}

fn sampling() -> Line {
    let draws = 10_000;
    let weights = [0.75, 0.25];
    let mut first = 0;
    for seed in 0..draws {
        if sample_without_replacement(&weights, 1, &mut seeded(seed))[0] == 0 {
            first += 1;
        }
    }
    let rate = first as f64 / draws as f64;
    let sigma = (0.75f64 * 0.25 / draws as f64).sqrt();
    let marginal_ok = (rate - 0.75).abs() <= 3.0 * sigma;

    let (a, b) = (candidate(0.2), candidate(0.6));
    let easy = selection_weights(&[&a, &b], Strategy::Easy, ScoreScale::Normalized)
        .unwrap()
        .probs;
    let hard_w = selection_weights(&[&a, &b], Strategy::Hard, ScoreScale::Normalized)
        .unwrap()
        .probs;
    let close = |x: &[f64], y: [f64; 2]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12);
    let fixtures_ok = close(&easy, [2.0 / 3.0, 1.0 / 3.0]) && close(&hard_w, [0.25, 0.75]);
    hard(
        4,
        "sampling distribution",
        marginal_ok && fixtures_ok,
        format!(
            "first-draw rate {rate:.4} vs 0.75 (3 sigma = {:.4}); easy {easy:.4?}, hard {hard_w:.4?}",
            3.0 * sigma
        ),
    )
}

fn reduction() -> Line {
    let corpus = generate(&SynthConfig {
        train_size: 800,
        test_size: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let fc = FeaturizedCorpus::new(&corpus, Featurizer::new(4096));
    let split = few_shot_split(&fc, 20, 3).unwrap();

    let mut classic = SelfTrainConfig::classic();
    classic.k = 20;
    classic.feature_dim = 4096;
    classic.hidden = 32;
    classic.dropout = 0.0;
    classic.passes = 10;
    classic.unlabeled_sample = 300;
    classic.policy.budget = 80;
    classic.iterations = 4;
    classic.patience = 10;
    classic.teacher_epochs = 20;
    classic.student_epochs = 5;
    classic.seed = 99;
    let mut easy = classic.clone();
    easy.policy.strategy = Strategy::Easy;
    easy.confident_learning = true;

    let (teacher, _) = train_teacher(&split, &classic).unwrap();
    let a = self_train_from(teacher.clone(), &split, &classic, None).unwrap();
    let b = self_train_from(teacher, &split, &easy, None).unwrap();
    let fa: Vec<u64> = a.rounds.iter().map(|r| r.model_fingerprint).collect();
    let fb: Vec<u64> = b.rounds.iter().map(|r| r.model_fingerprint).collect();
    let zero_bald = b.rounds.iter().all(|r| r.mean_bald_selected == 0.0);
    hard(
        5,
        "reduction to classic self-training",
        fa == fb && !fa.is_empty() && a.model.fingerprint() == b.model.fingerprint() && zero_bald,
        format!(
            "{} rounds, per-round parameters identical: {}",
            fa.len(),
            fa == fb
        ),
    )
}

fn desk_plan() -> ExperimentPlan {
    let mut plan = ExperimentPlan::from_toml(
        r#"
        cells = ["base", "classic_st", "ust_easy", "ust_easy-conf"]
        k = [30]
        seeds = [0, 1, 2, 3, 4]

        [config]
        unlabeled_sample = 2048
        passes = 30
        iterations = 15
        policy = { strategy = "easy", class_dependent = true, budget = 512 }
        "#,
    )
    .unwrap();
    plan.corpus = "synthetic".into();
    plan
}

fn desk_run(fc: &FeaturizedCorpus, out: &Path) -> (RunReport, Vec<u8>, f64) {
    let start = Instant::now();
    let report = run_plan_on(&desk_plan(), fc, Some(out)).unwrap();
    emit_report(&report, out).unwrap();
    let bytes = fs::read(out.join(RESULTS_FILE)).unwrap();
    (report, bytes, start.elapsed().as_secs_f64())
}

fn mean(report: &RunReport, cell: &str) -> f64 {
    100.0 * report.summary(cell, 30).mean.unwrap_or(f64::NAN)
}

fn std(report: &RunReport, cell: &str) -> f64 {
    100.0 * report.summary(cell, 30).std.unwrap_or(f64::NAN)
}

fn main() {
    let mut lines = vec![
        bald_oracle(),
        variance_oracle(),
        gradients(),
        sampling(),
        reduction(),
    ];

    let corpus = generate(&SynthConfig::default()).unwrap();
    let fc = FeaturizedCorpus::new(&corpus, Featurizer::default());
    let dir = tempfile::tempdir().unwrap();
    let (report, first, secs) = desk_run(&fc, &dir.path().join("first"));
    print!("{}", report.table());
    let cell = |c: &str| c.parse::<Cell>().unwrap().to_string();
    let (base, classic, easy, no_conf) = (
        mean(&report, &cell("base")),
        mean(&report, &cell("classic_st")),
        mean(&report, &cell("ust_easy")),
        mean(&report, &cell("ust_easy-conf")),
    );
    lines.push(hard(
        6,
        "directional improvement",
        !report.any_failed() && easy >= classic && classic >= base && easy - base >= 2.0,
        format!("UST-easy {easy:.2} >= classic {classic:.2} >= base {base:.2}; margin {:.2} points; {secs:.0}s", easy - base),
    ));
    lines.push(hard(
        7,
        "ablation direction",
        easy >= no_conf - 0.3 && easy >= classic - 0.3,
        format!("UST-easy {easy:.2} vs without confident learning {no_conf:.2} and classic {classic:.2} (tie band 0.3)"),
    ));
    let (s_easy, s_classic) = (
        std(&report, &cell("ust_easy")),
        std(&report, &cell("classic_st")),
    );
    lines.push(Line {
        id: 8,
        name: "variance-reduction tendency (soft)",
        verdict: if s_easy <= s_classic {
            Verdict::Pass
        } else {
            Verdict::Warn
        },
        detail: format!("seed std UST-easy {s_easy:.2} vs classic {s_classic:.2}"),
    });

    let (_, second, _) = desk_run(&fc, &dir.path().join("second"));
    let reference = include_bytes!("fixtures/reference_results.jsonl");
    lines.push(hard(
        9,
        "protocol invariants",
        report.audit_passed() && report.audits.len() == 5 && first == second,
        format!(
            "test-set audit {} ({} jobs), rerun bit-identical: {}, matches committed reference run: {}",
            if report.audit_passed() { "passed" } else { "FAILED" },
            report.audits.len(),
            first == second,
            first.as_slice() == reference.as_slice()
        ),
    ));

    let mut failed = false;
    for l in &lines {
        let tag = match l.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed = true;
                "FAIL"
            }
            Verdict::Warn => "WARN",
        };
        println!("criterion {} [{tag}] {}: {}", l.id, l.name, l.detail);
    }
    if failed {
        std::process::exit(1);
    }
}
