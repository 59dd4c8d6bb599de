//! Choosing which pseudo-labeled examples enter a self-training round.
//!
//! Easy selection samples proportionally to `1 - s` and hard selection
//! proportionally to `s`, where `s` is the BALD score of the candidate (by
//! default divided by `ln C` so that `1 - s` stays non-negative for more than
//! two classes). Draws are sequential, without replacement, renormalizing the
//! remaining mass after each pick. With class-dependent selection the budget is
//! split across the voted classes first.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UstError};
use crate::uncertainty::UncertaintyEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Easy,
    Hard,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Easy => "easy",
            Strategy::Hard => "hard",
        })
    }
}

impl FromStr for Strategy {
    type Err = UstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "easy" => Ok(Strategy::Easy),
            "hard" => Ok(Strategy::Hard),
            other => Err(UstError::InvalidConfig(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

/// Which BALD value feeds the easy/hard weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    /// `bald / ln C`.
    #[default]
    Normalized,
    /// Raw nats. `1 - bald` is clamped at zero, which only matters for C > 2.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub strategy: Strategy,
    pub class_dependent: bool,
    pub budget: usize,
    #[serde(default)]
    pub score_scale: ScoreScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: usize,
    pub estimate: UncertaintyEstimate,
}

impl ScoredCandidate {
    fn score(&self, scale: ScoreScale) -> f64 {
        match scale {
            ScoreScale::Normalized => self.estimate.bald_norm,
            ScoreScale::Raw => self.estimate.bald,
        }
    }
}

/// Splits the pool by voted label. Out-of-range labels are an error.
pub fn partition_by_label(
    pool: &[ScoredCandidate],
    classes: usize,
) -> Result<Vec<Vec<&ScoredCandidate>>> {
    let mut parts = vec![Vec::new(); classes];
    for cand in pool {
        let label = cand.estimate.hard_label;
        parts
            .get_mut(label)
            .ok_or(UstError::LabelOutOfRange { label, classes })?
            .push(cand);
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeights {
    pub probs: Vec<f64>,
    /// Set when the strategy assigned zero total mass and uniform was used.
    pub fell_back: bool,
}

pub fn selection_weights(
    cands: &[&ScoredCandidate],
    strategy: Strategy,
    scale: ScoreScale,
) -> Result<SelectionWeights> {
    if cands.is_empty() {
        return Err(UstError::EmptyPool);
    }
    let n = cands.len();
    let uniform = || vec![1.0 / n as f64; n];
    let raw: Vec<f64> = match strategy {
        Strategy::Uniform => {
            return Ok(SelectionWeights {
                probs: uniform(),
                fell_back: false,
            })
        }
        Strategy::Easy => cands
            .iter()
            .map(|c| (1.0 - c.score(scale)).max(0.0))
            .collect(),
        Strategy::Hard => cands.iter().map(|c| c.score(scale)).collect(),
    };
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(SelectionWeights {
            probs: raw.into_iter().map(|w| w / total).collect(),
            fell_back: false,
        })
    } else {
        warn!("{strategy} selection has zero mass over {n} candidates; using uniform");
        Ok(SelectionWeights {
            probs: uniform(),
            fell_back: true,
        })
    }
}

/// Draws `k` distinct positions by successive weighted draws, renormalizing
/// after each removal. When the remaining mass is zero the rest are drawn
/// uniformly. `k` larger than the pool is clamped.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = weights.len();
    let k = if k > n {
        info!("requested {k} draws from {n} candidates; clamping");
        n
    } else {
        k
    };
    let mut remaining: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&(_, w)| w).sum();
        let pos = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (p, &(_, w)) in remaining.iter().enumerate() {
                acc += w;
                if w > 0.0 && target < acc {
                    pick = Some(p);
                    break;
                }
            }
            // rounding can leave target >= acc; take the last positive weight
            pick.unwrap_or_else(|| remaining.iter().rposition(|&(_, w)| w > 0.0).unwrap())
        } else {
            rng.random_range(0..remaining.len())
        };
        chosen.push(remaining.remove(pos).0);
    }
    chosen
}

/// Per-class budgets: `floor(R / C)` each, remainder one per class in
/// ascending index, then any shortfall from small classes redistributed to the
/// others proportionally to their pool sizes.
pub fn class_budgets(pool_sizes: &[usize], budget: usize) -> Vec<usize> {
    let classes = pool_sizes.len();
    if classes == 0 {
        return Vec::new();
    }
    let budget = budget.min(pool_sizes.iter().sum());
    let mut out: Vec<usize> = (0..classes)
        .map(|c| budget / classes + usize::from(c < budget % classes))
        .collect();
    loop {
        let mut shortfall = 0;
        for (b, &size) in out.iter_mut().zip(pool_sizes) {
            if *b > size {
                shortfall += *b - size;
                *b = size;
            }
        }
        if shortfall == 0 {
            return out;
        }
        let open: Vec<usize> = (0..classes).filter(|&c| pool_sizes[c] > out[c]).collect();
        let open_size: usize = open.iter().map(|&c| pool_sizes[c]).sum();
        let mut given = 0;
        for &c in &open {
            let share = shortfall * pool_sizes[c] / open_size;
            out[c] += share;
            given += share;
        }
        // leftover units one at a time in ascending index; capping happens next pass
        for &c in open.iter().cycle().take(shortfall - given) {
            out[c] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTrace {
    /// `None` for a global (class-independent) draw.
    pub class: Option<usize>,
    pub pool_size: usize,
    pub budget: usize,
    pub chosen: Vec<usize>,
    pub fell_back: bool,
    pub bald_min: f64,
    pub bald_median: f64,
    pub bald_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: Vec<ScoredCandidate>,
    pub trace: Vec<ClassTrace>,
}

fn bald_summary(cands: &[&ScoredCandidate]) -> (f64, f64, f64) {
    if cands.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut b: Vec<f64> = cands.iter().map(|c| c.estimate.bald).collect();
    b.sort_by(f64::total_cmp);
    let n = b.len();
    let median = if n % 2 == 1 {
        b[n / 2]
    } else {
        0.5 * (b[n / 2 - 1] + b[n / 2])
    };
    (b[0], median, b[n - 1])
}

fn draw<R: Rng + ?Sized>(
    cands: &[&ScoredCandidate],
    class: Option<usize>,
    budget: usize,
    policy: &SelectionPolicy,
    rng: &mut R,
    out: &mut Selection,
) -> Result<()> {
    let (bald_min, bald_median, bald_max) = bald_summary(cands);
    let mut trace = ClassTrace {
        class,
        pool_size: cands.len(),
        budget,
        chosen: Vec::new(),
        fell_back: false,
        bald_min,
        bald_median,
        bald_max,
    };
    if budget > 0 && !cands.is_empty() {
        let weights = selection_weights(cands, policy.strategy, policy.score_scale)?;
        trace.fell_back = weights.fell_back;
        for pos in sample_without_replacement(&weights.probs, budget, rng) {
            trace.chosen.push(cands[pos].id);
            out.chosen.push(cands[pos].clone());
        }
    }
    out.trace.push(trace);
    Ok(())
}

/// Selects up to `policy.budget` candidates from `pool`.
pub fn select<R: Rng + ?Sized>(
    pool: &[ScoredCandidate],
    classes: usize,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<Selection> {
    if pool.is_empty() {
        return Err(UstError::EmptyPool);
    }
    let mut out = Selection {
        chosen: Vec::new(),
        trace: Vec::new(),
    };
    if policy.class_dependent {
        let parts = partition_by_label(pool, classes)?;
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        let budgets = class_budgets(&sizes, policy.budget);
        for (c, (part, &b)) in parts.iter().zip(&budgets).enumerate() {
            draw(part, Some(c), b, policy, rng, &mut out)?;
        }
    } else {
        let all: Vec<&ScoredCandidate> = pool.iter().collect();
        let budget = policy.budget.min(pool.len());
        draw(&all, None, budget, policy, rng, &mut out)?;
    }
    Ok(out)
}

/// Appends trace rows: `round  class  pool_size  budget  bald_min  bald_median
/// bald_max  fallback  chosen_ids` (ids comma-separated, class `*` for global).
pub fn write_trace<W: Write>(mut w: W, round: usize, trace: &[ClassTrace]) -> std::io::Result<()> {
    for t in trace {
        let class = t.class.map_or_else(|| "*".to_string(), |c| c.to_string());
        let ids: Vec<String> = t.chosen.iter().map(usize::to_string).collect();
        writeln!(
            w,
            "{round}\t{class}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            t.pool_size,
            t.budget,
            t.bald_min,
            t.bald_median,
            t.bald_max,
            u8::from(t.fell_back),
            ids.join(",")
        )?;
    }
    Ok(())
}

pub const TRACE_HEADER: &str =
    "round\tclass\tpool_size\tbudget\tbald_min\tbald_median\tbald_max\tfallback\tchosen_ids";
