// Monte-Carlo dropout on a small network: predictive mean, per-class
// variance, BALD and the voted hard label for a handful of inputs.

use ust::features::Featurizer;
use ust::rng::seeded;
use ust::uncertainty::{estimate_batch, run_passes, DEFAULT_PASSES};
use ust::{Mlp, MlpConfig, UncertaintyEstimate};

pub fn run_example(passes: usize) -> ust::Result<Vec<UncertaintyEstimate>> {
    let featurizer = Featurizer::new(1024);
    let model = Mlp::new(MlpConfig::single_hidden(1024, 32, 3, 0.5), &mut seeded(7))?;
    let texts = ["the plot was thin", "great acting and a great score", "meh"];
    let features: Vec<_> = texts.iter().map(|t| featurizer.featurize(t)).collect();

    let first = run_passes(&model, &features[0], 4, &mut seeded(1))?;
    println!("first four passes for {:?}:", texts[0]);
    for row in first.rows() {
        println!("  {row:.4?}");
    }

    let items: Vec<_> = features.iter().enumerate().collect();
    let estimates = estimate_batch(&model, &items, passes, 2020)?;
    for (text, est) in texts.iter().zip(&estimates) {
        println!(
            "{text:?}: label {} (votes {:.2}), mean {:.3?}, variance {:.2e}, BALD {:.4} nats",
            est.hard_label,
            est.vote_margin,
            est.mean,
            est.label_variance(),
            est.bald
        );
    }
    Ok(estimates)
}

fn main() -> ust::Result<()> {
    run_example(DEFAULT_PASSES)?;
    Ok(())
}
