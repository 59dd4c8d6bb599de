// A small multi-seed ablation: teacher only, classic self-training, and
// self-training guided by BALD and confidence weights, with components removed. Writes
// results.jsonl, table.txt and per-round curves.

use ust::data::synth::{generate, SynthConfig};
use ust::data::{FeaturizedCorpus, Featurizer};
use ust::experiment::{emit_report, run_plan_on, ExperimentPlan, RunReport};

pub fn run_example(
    plan: &ExperimentPlan,
    train_size: usize,
    out: &std::path::Path,
) -> ust::Result<RunReport> {
    let corpus = generate(&SynthConfig {
        train_size,
        test_size: train_size / 2,
        ..SynthConfig::default()
    })?;
    let featurized = FeaturizedCorpus::new(&corpus, Featurizer::new(plan.config.feature_dim));
    let report = run_plan_on(plan, &featurized, Some(out))?;
    emit_report(&report, out)?;
    print!("{}", report.table());
    println!("test-set audit passed: {}", report.audit_passed());
    Ok(report)
}

fn main() -> ust::Result<()> {
    let plan = ExperimentPlan::from_toml(
        r#"
        cells = ["base", "classic_st", "ust_easy", "ust_easy-conf", "ust_easy-class"]
        k = [30]
        seeds = [0, 1, 2]

        [config]
        unlabeled_sample = 2048
        iterations = 10
        policy = { strategy = "easy", class_dependent = true, budget = 512 }
        "#,
    )?;
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "ablation-out".to_string());
    run_example(&plan, 2000, std::path::Path::new(&out))?;
    Ok(())
}
