// Easy, hard and uniform selection over a scored pool, with and without
// class-dependent budgets.

use ust::rng::seeded;
use ust::selection::{select, ScoreScale, Selection};
use ust::uncertainty::PassMatrix;
use ust::{ScoredCandidate, SelectionPolicy, Strategy, UncertaintyEstimate};

fn candidate(id: usize, p: f64, spread: f64) -> ust::Result<ScoredCandidate> {
    // two passes straddling p; a wider spread means more disagreement
    let hi = (p + spread).min(1.0);
    let lo = (p - spread).max(0.0);
    let pm = PassMatrix::from_rows(vec![vec![hi, 1.0 - hi], vec![lo, 1.0 - lo]])?;
    Ok(ScoredCandidate {
        id,
        estimate: UncertaintyEstimate::from_passes(&pm),
    })
}

pub fn run_example(budget: usize) -> ust::Result<Vec<(String, Selection)>> {
    let pool: Vec<ScoredCandidate> = (0..60)
        .map(|i| {
            let p = if i % 4 == 0 { 0.3 } else { 0.8 };
            candidate(i, p, (i % 10) as f64 * 0.03)
        })
        .collect::<ust::Result<_>>()?;

    let mut out = Vec::new();
    for strategy in [Strategy::Easy, Strategy::Hard, Strategy::Uniform] {
        for class_dependent in [true, false] {
            let policy = SelectionPolicy {
                strategy,
                class_dependent,
                budget,
                score_scale: ScoreScale::Normalized,
            };
            let selection = select(&pool, 2, &policy, &mut seeded(3))?;
            let mean_bald = selection
                .chosen
                .iter()
                .map(|c| c.estimate.bald)
                .sum::<f64>()
                / selection.chosen.len().max(1) as f64;
            let per_class: Vec<(Option<usize>, usize)> = selection
                .trace
                .iter()
                .map(|t| (t.class, t.chosen.len()))
                .collect();
            let name = format!("{strategy}{}", if class_dependent { "+class" } else { "" });
            println!("{name:<14} mean BALD {mean_bald:.4}  per class {per_class:?}");
            out.push((name, selection));
        }
    }
    Ok(out)
}

fn main() -> ust::Result<()> {
    run_example(16)?;
    Ok(())
}
