// Self-training guided by dropout uncertainty on a synthetic corpus: easy selection,
// class-dependent budgets and confidence-weighted student training.

use ust::data::synth::{generate, SynthConfig};
use ust::data::{few_shot_split, FeaturizedCorpus, Featurizer};
use ust::self_train::{run_self_training, SelfTrainConfig};
use ust::{SelfTrainOutcome, Strategy};

pub fn run_example(
    train_size: usize,
    iterations: usize,
    dim: usize,
) -> ust::Result<SelfTrainOutcome> {
    let corpus = generate(&SynthConfig {
        train_size,
        test_size: train_size / 2,
        ..SynthConfig::default()
    })?;
    let featurized = FeaturizedCorpus::new(&corpus, Featurizer::new(dim));
    let split = few_shot_split(&featurized, 30, 5)?;

    let mut cfg = SelfTrainConfig::ust(Strategy::Easy);
    cfg.feature_dim = dim;
    cfg.unlabeled_sample = split.unlabeled.len().min(2048);
    cfg.policy.budget = cfg.unlabeled_sample / 4;
    cfg.iterations = iterations;
    cfg.seed = 5;

    let outcome = run_self_training(&split, &cfg, None)?;
    println!(
        "round 0 (teacher): valid loss {:.4}, accuracy {:.3}",
        outcome.teacher.valid_loss, outcome.teacher.valid_accuracy
    );
    for r in &outcome.rounds {
        println!(
            "round {:>2}: valid loss {:.4}, accuracy {:.3}, selected {:?}, pseudo-label accuracy {:.3}",
            r.round,
            r.valid_loss,
            r.valid_accuracy,
            r.selected_per_class,
            r.pseudo_label_accuracy.unwrap_or(f64::NAN)
        );
    }
    let test = split.test.evaluate(&outcome.model)?;
    println!(
        "selected round {}, test accuracy {:.4}",
        outcome.best_round, test.accuracy
    );
    Ok(outcome)
}

fn main() -> ust::Result<()> {
    run_example(2000, 15, ust::data::DEFAULT_DIM)?;
    Ok(())
}
