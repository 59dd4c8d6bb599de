// Few-shot teacher: K labeled examples per class from a synthetic corpus,
// early stopping on a K-per-class validation set, checkpoint round trip.

use ust::data::synth::{generate, SynthConfig};
use ust::data::{few_shot_split, FeaturizedCorpus, Featurizer};
use ust::self_train::{train_teacher, SelfTrainConfig};
use ust::Mlp;

pub fn run_example(train_size: usize, k: usize, dim: usize) -> ust::Result<f64> {
    let corpus = generate(&SynthConfig {
        train_size,
        test_size: train_size / 2,
        ..SynthConfig::default()
    })?;
    let featurized = FeaturizedCorpus::new(&corpus, Featurizer::new(dim));
    let split = few_shot_split(&featurized, k, 11)?;
    println!(
        "{} labeled, {} validation, {} unlabeled, {} test",
        split.labeled.len(),
        split.validation.len(),
        split.unlabeled.len(),
        split.test.len()
    );

    let cfg = SelfTrainConfig {
        k,
        feature_dim: dim,
        seed: 11,
        ..SelfTrainConfig::default()
    };
    let (teacher, fit) = train_teacher(&split, &cfg)?;
    println!(
        "best epoch {} of {}, validation loss {:.4}",
        fit.best_epoch, fit.epochs_run, fit.best_valid_loss
    );

    let path = std::env::temp_dir().join(format!("ust-teacher-{}.bin", std::process::id()));
    teacher.save(&path)?;
    let restored = Mlp::load(&path)?;
    std::fs::remove_file(&path).ok();
    assert_eq!(restored.fingerprint(), teacher.fingerprint());

    let test = split.test.evaluate(&restored)?;
    println!(
        "test accuracy {:.4}, macro-F1 {:.4}",
        test.accuracy, test.macro_f1
    );
    Ok(test.accuracy)
}

fn main() -> ust::Result<()> {
    run_example(2000, 30, ust::data::DEFAULT_DIM)?;
    Ok(())
}
