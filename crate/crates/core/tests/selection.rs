use std::collections::HashSet;

use proptest::prelude::*;
use ust::rng::seeded;
use ust::selection::{
    class_budgets, sample_without_replacement, select, selection_weights, ScoreScale,
};
use ust::{ScoredCandidate, SelectionPolicy, Strategy, UncertaintyEstimate};

fn candidate(id: usize, label: usize, bald_norm: f64) -> ScoredCandidate {
    let ln2 = 2f64.ln();
    let mut mean = vec![0.5, 0.5];
    mean[label] = 0.8;
    mean[1 - label] = 0.2;
    ScoredCandidate {
        id,
        estimate: UncertaintyEstimate {
            mean,
            variance: vec![0.01, 0.01],
            bald: bald_norm * ln2,
            bald_norm,
            hard_label: label,
            vote_margin: 1.0,
        },
    }
}

#[test]
fn easy_and_hard_weight_fixtures() {
    let a = candidate(0, 0, 0.2);
    let b = candidate(1, 0, 0.6);
    let easy = selection_weights(&[&a, &b], Strategy::Easy, ScoreScale::Normalized).unwrap();
    assert!((easy.probs[0] - 2.0 / 3.0).abs() < 1e-12 && (easy.probs[1] - 1.0 / 3.0).abs() < 1e-12);
    let hard = selection_weights(&[&a, &b], Strategy::Hard, ScoreScale::Normalized).unwrap();
    assert!((hard.probs[0] - 0.25).abs() < 1e-12 && (hard.probs[1] - 0.75).abs() < 1e-12);
    let uniform = selection_weights(&[&a, &b], Strategy::Uniform, ScoreScale::Normalized).unwrap();
    assert_eq!(uniform.probs, vec![0.5, 0.5]);
}

#[test]
fn zero_mass_falls_back_to_uniform() {
    let pool = [candidate(0, 0, 0.0), candidate(1, 1, 0.0)];
    let refs: Vec<&ScoredCandidate> = pool.iter().collect();
    let hard = selection_weights(&refs, Strategy::Hard, ScoreScale::Normalized).unwrap();
    assert!(hard.fell_back);
    assert_eq!(hard.probs, vec![0.5, 0.5]);
}

/// First-draw pick rates against the requested weights, 3-sigma binomial bounds.
pub fn first_draw_rates(weights: &[f64], draws: u64) -> Vec<(f64, f64, f64)> {
    let mut counts = vec![0u64; weights.len()];
    for seed in 0..draws {
        let pick = sample_without_replacement(weights, 1, &mut seeded(seed));
        counts[pick[0]] += 1;
    }
    let total: f64 = weights.iter().sum();
    counts
        .iter()
        .zip(weights)
        .map(|(&c, &w)| {
            let p = w / total;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            (c as f64 / draws as f64, p, sigma)
        })
        .collect()
}

#[test]
fn first_draw_marginal_matches_weights() {
    let rates = first_draw_rates(&[0.75, 0.25], 10_000);
    assert!((0.73..=0.77).contains(&rates[0].0), "{rates:?}");
    for weights in [vec![0.75, 0.25], vec![0.5, 0.3, 0.15, 0.05, 0.0]] {
        for (rate, p, sigma) in first_draw_rates(&weights, 10_000) {
            assert!((rate - p).abs() <= 3.0 * sigma, "{rate} vs {p}");
        }
    }
}

#[test]
fn class_dependent_selection_respects_labels() {
    let pool: Vec<ScoredCandidate> = (0..100)
        .map(|i| candidate(i, usize::from(i % 5 == 0), 0.1))
        .collect();
    let policy = SelectionPolicy {
        strategy: Strategy::Easy,
        class_dependent: true,
        budget: 30,
        score_scale: ScoreScale::Normalized,
    };
    let sel = select(&pool, 2, &policy, &mut seeded(1)).unwrap();
    assert_eq!(sel.chosen.len(), 30);
    for t in &sel.trace {
        let c = t.class.unwrap();
        assert_eq!(t.chosen.len(), t.budget);
        assert!(t.chosen.iter().all(|&id| pool[id].estimate.hard_label == c));
    }
    assert_eq!(sel.trace[0].budget, 15);
    assert_eq!(sel.trace[1].budget, 15);
}

#[test]
fn selection_is_seed_deterministic() {
    let pool: Vec<ScoredCandidate> = (0..50)
        .map(|i| candidate(i, i % 2, (i % 7) as f64 / 7.0))
        .collect();
    let policy = SelectionPolicy {
        strategy: Strategy::Hard,
        class_dependent: false,
        budget: 10,
        score_scale: ScoreScale::Normalized,
    };
    let ids = |seed| -> Vec<usize> {
        select(&pool, 2, &policy, &mut seeded(seed))
            .unwrap()
            .chosen
            .iter()
            .map(|c| c.id)
            .collect()
    };
    assert_eq!(ids(3), ids(3));
    assert_ne!(ids(3), ids(4));
}

proptest! {
    #[test]
    fn draws_are_distinct_and_clamped(
        weights in prop::collection::vec(0.0f64..1.0, 1..40),
        k in 0usize..50,
        seed in any::<u64>(),
    ) {
        let picks = sample_without_replacement(&weights, k, &mut seeded(seed));
        prop_assert_eq!(picks.len(), k.min(weights.len()));
        let set: HashSet<usize> = picks.iter().copied().collect();
        prop_assert_eq!(set.len(), picks.len());
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        // zero-weight items only appear once the positive mass is exhausted
        for (n, &p) in picks.iter().enumerate() {
            if weights[p] == 0.0 {
                prop_assert!(n >= positive);
            }
        }
    }

    #[test]
    fn budgets_fill_up_to_pool(sizes in prop::collection::vec(0usize..60, 1..8), budget in 0usize..200) {
        let b = class_budgets(&sizes, budget);
        prop_assert_eq!(b.len(), sizes.len());
        prop_assert!(b.iter().zip(&sizes).all(|(x, s)| x <= s));
        prop_assert_eq!(b.iter().sum::<usize>(), budget.min(sizes.iter().sum()));
    }

    #[test]
    fn weights_are_probabilities(scores in prop::collection::vec(0.0f64..1.0, 1..30), hard in any::<bool>()) {
        let pool: Vec<ScoredCandidate> = scores.iter().enumerate().map(|(i, &s)| candidate(i, 0, s)).collect();
        let refs: Vec<&ScoredCandidate> = pool.iter().collect();
        let strategy = if hard { Strategy::Hard } else { Strategy::Easy };
        let w = selection_weights(&refs, strategy, ScoreScale::Normalized).unwrap();
        prop_assert!((w.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.probs.iter().all(|&p| p >= 0.0));
        // easy favours low scores, hard favours high scores
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] < scores[j] && !w.fell_back {
                    if hard {
                        prop_assert!(w.probs[i] <= w.probs[j]);
                    } else {
                        prop_assert!(w.probs[i] >= w.probs[j]);
                    }
                }
            }
        }
    }
}
