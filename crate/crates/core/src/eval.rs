//! Sampled-negative ranking protocol, hit rate / NDCG / MRR, and slice
//! reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use sgrec_tensor::{rng, Real};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::model::Llmgr;
use crate::params::{Ctx, GroupSet, ParameterStore};
use crate::sbr::Sbr;

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];
pub const DEFAULT_NEGATIVES: usize = 99;
pub const DEFAULT_COLD_THRESHOLD: usize = 5;
/// Prefixes of at most this many items are short.
pub const SHORT_SESSION_MAX: usize = 7;

/// Anything that scores every item given a session prefix.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;
    fn scores(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// The recommender alone, scoring by embedding inner products.
pub struct SbrScorer<'a, T: Real> {
    pub sbr: &'a Sbr,
    pub store: &'a ParameterStore<T>,
}

impl<T: Real> Scorer for SbrScorer<'_, T> {
    fn num_items(&self) -> usize {
        self.sbr.num_items
    }

    fn scores(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let frozen = GroupSet::new();
        let mut ctx = Ctx::new(self.store, &frozen);
        let z = self.sbr.session_embedding(&mut ctx, prefix, None)?;
        let s = self.sbr.score(&mut ctx, z)?;
        Ok(ctx.tape.value(s).to_f64_vec())
    }
}

/// The full model through the behavior prompt.
pub struct ModelScorer<'a, T: Real> {
    pub model: &'a Llmgr,
    pub store: &'a ParameterStore<T>,
}

impl<T: Real> Scorer for ModelScorer<'_, T> {
    fn num_items(&self) -> usize {
        self.model.num_items()
    }

    fn scores(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let frozen = GroupSet::new();
        let mut ctx = Ctx::new(self.store, &frozen);
        self.model.recommend(&mut ctx, prefix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedOutcome {
    /// Position of the example in the evaluated list.
    pub example: usize,
    pub target: usize,
    pub prefix_len: usize,
    /// 1-based rank of the target among the candidates.
    pub rank: usize,
    pub candidates: usize,
}

/// Target plus up to `num_negatives` distinct items that are neither the
/// target nor in the prefix, shuffled.
pub fn sample_candidates(
    num_items: usize,
    prefix: &[usize],
    target: usize,
    num_negatives: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut excluded: BTreeSet<usize> = prefix.iter().copied().collect();
    excluded.insert(target);
    let eligible: Vec<usize> = (0..num_items).filter(|v| !excluded.contains(v)).collect();
    let mut candidates = vec![target];
    if eligible.len() <= num_negatives {
        candidates.extend(eligible);
    } else {
        candidates.extend(eligible.choose_multiple(rng, num_negatives).copied());
    }
    candidates.shuffle(rng);
    candidates
}

/// `1 +` candidates scoring strictly higher `+` equal-scoring candidates
/// placed before the target.
pub fn rank_in(scores: &[f64], candidates: &[usize], target: usize) -> usize {
    let ts = scores[target];
    let mut rank = 1;
    for &c in candidates {
        if c == target {
            break;
        }
        if scores[c] >= ts {
            rank += 1;
        }
    }
    let pos = candidates.iter().position(|&c| c == target).unwrap_or(candidates.len());
    rank + candidates[pos..].iter().filter(|&&c| scores[c] > ts).count()
}

pub fn rank_target(
    scores: &[f64],
    prefix: &[usize],
    target: usize,
    num_negatives: usize,
    rng: &mut impl Rng,
) -> Result<(usize, usize)> {
    if target >= scores.len() {
        return Err(Error::invalid(format!("target {target} outside [0, {})", scores.len())));
    }
    let candidates = sample_candidates(scores.len(), prefix, target, num_negatives, rng);
    Ok((rank_in(scores, &candidates, target), candidates.len()))
}

/// Ranks every example. Each example draws candidates from its own stream,
/// so results do not depend on scheduling.
pub fn evaluate(scorer: &dyn Scorer, examples: &[Example], num_negatives: usize, seed: u64) -> Result<Vec<RankedOutcome>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let scores = scorer.scores(&ex.prefix)?;
            if scores.len() != scorer.num_items() {
                return Err(Error::invalid("scorer returned the wrong number of scores"));
            }
            let mut r = rng::stream(seed, i as u64);
            let (rank, candidates) = rank_target(&scores, &ex.prefix, ex.target, num_negatives, &mut r)?;
            Ok(RankedOutcome {
                example: i,
                target: ex.target,
                prefix_len: ex.prefix.len(),
                rank,
                candidates,
            })
        })
        .collect()
}

fn mean_of(outcomes: &[RankedOutcome], k: usize, f: impl Fn(usize) -> f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no outcomes to average"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let total: f64 = outcomes
        .iter()
        .map(|o| if o.rank <= k { f(o.rank) } else { 0.0 })
        .sum();
    Ok(total / outcomes.len() as f64)
}

pub fn hit_rate(outcomes: &[RankedOutcome], k: usize) -> Result<f64> {
    mean_of(outcomes, k, |_| 1.0)
}

/// Single relevant item, so the ideal DCG is 1.
pub fn ndcg(outcomes: &[RankedOutcome], k: usize) -> Result<f64> {
    mean_of(outcomes, k, |r| 1.0 / (r as f64 + 1.0).log2())
}

pub fn mrr(outcomes: &[RankedOutcome], k: usize) -> Result<f64> {
    mean_of(outcomes, k, |r| 1.0 / r as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slice {
    All,
    Short,
    Long,
    Warm,
    Cold,
}

impl Slice {
    pub const ALL: [Slice; 5] = [Slice::All, Slice::Short, Slice::Long, Slice::Warm, Slice::Cold];

    pub fn name(self) -> &'static str {
        match self {
            Slice::All => "all",
            Slice::Short => "short",
            Slice::Long => "long",
            Slice::Warm => "warm",
            Slice::Cold => "cold",
        }
    }

    pub fn contains(self, o: &RankedOutcome, item_train_counts: &[usize], cold_threshold: usize) -> bool {
        let cold = item_train_counts.get(o.target).copied().unwrap_or(0) <= cold_threshold;
        match self {
            Slice::All => true,
            Slice::Short => o.prefix_len <= SHORT_SESSION_MAX,
            Slice::Long => o.prefix_len > SHORT_SESSION_MAX,
            Slice::Warm => !cold,
            Slice::Cold => cold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    HitRate,
    Ndcg,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::HitRate, Metric::Ndcg, Metric::Mrr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::HitRate => "HitRate",
            Metric::Ndcg => "NDCG",
            Metric::Mrr => "MRR",
        }
    }

    pub fn compute(self, outcomes: &[RankedOutcome], k: usize) -> Result<f64> {
        match self {
            Metric::HitRate => hit_rate(outcomes, k),
            Metric::Ndcg => ndcg(outcomes, k),
            Metric::Mrr => mrr(outcomes, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: Metric,
    pub k: usize,
    pub slice: Slice,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Outcomes per slice; slices with none are absent from `rows`.
    pub counts: Vec<(Slice, usize)>,
}

impl MetricReport {
    pub fn build(outcomes: &[RankedOutcome], ks: &[usize], item_train_counts: &[usize], cold_threshold: usize) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("no outcomes to report"));
        }
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        for slice in Slice::ALL {
            let subset: Vec<RankedOutcome> = outcomes
                .iter()
                .filter(|o| slice.contains(o, item_train_counts, cold_threshold))
                .cloned()
                .collect();
            counts.push((slice, subset.len()));
            if subset.is_empty() {
                continue;
            }
            for metric in Metric::ALL {
                for &k in ks {
                    rows.push(MetricRow {
                        metric,
                        k,
                        slice,
                        value: metric.compute(&subset, k)?,
                    });
                }
            }
        }
        Ok(Self { rows, counts })
    }

    pub fn get(&self, metric: Metric, k: usize, slice: Slice) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.k == k && r.slice == slice)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,K,slice,value\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.metric.name(), r.k, r.slice.name(), r.value).unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &(slice, n) in &self.counts {
            if n == 0 {
                writeln!(s, "[{}] absent", slice.name()).unwrap();
                continue;
            }
            writeln!(s, "[{}] n={n}", slice.name()).unwrap();
            for r in self.rows.iter().filter(|r| r.slice == slice) {
                writeln!(s, "  {}@{}\t{:.4}", r.metric.name(), r.k, r.value).unwrap();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(rank: usize) -> RankedOutcome {
        RankedOutcome {
            example: 0,
            target: 0,
            prefix_len: 3,
            rank,
            candidates: 100,
        }
    }

    #[test]
    fn single_outcome_metrics() {
        assert_eq!(hit_rate(&[outcome(3)], 5).unwrap(), 1.0);
        assert_eq!(hit_rate(&[outcome(6)], 5).unwrap(), 0.0);
        assert_eq!(ndcg(&[outcome(1)], 5).unwrap(), 1.0);
        assert_eq!(ndcg(&[outcome(3)], 5).unwrap(), 0.5);
        assert_eq!(ndcg(&[outcome(11)], 10).unwrap(), 0.0);
        assert_eq!(mrr(&[outcome(4)], 5).unwrap(), 0.25);
        assert_eq!(mrr(&[outcome(7)], 5).unwrap(), 0.0);
    }

    #[test]
    fn empty_outcomes_rejected() {
        assert!(hit_rate(&[], 5).is_err());
        assert!(ndcg(&[outcome(1)], 0).is_err());
    }

    #[test]
    fn unique_maximum_ranks_first() {
        let scores = [0.1, 0.9, 0.3, 0.2];
        assert_eq!(rank_in(&scores, &[0, 2, 1, 3], 1), 1);
        assert_eq!(rank_in(&scores, &[0, 2, 1, 3], 0), 4);
    }

    #[test]
    fn ties_resolve_by_candidate_position() {
        let scores = [0.5; 100];
        let cands: Vec<usize> = (0..100).rev().collect();
        // target 40 sits at position 59
        assert_eq!(rank_in(&scores, &cands, 40), 60);
    }

    #[test]
    fn negatives_avoid_prefix_and_target() {
        let mut r = rng::stream(5, 0);
        let c = sample_candidates(300, &[1, 2, 3], 7, 99, &mut r);
        assert_eq!(c.len(), 100);
        let set: BTreeSet<_> = c.iter().copied().collect();
        assert_eq!(set.len(), 100);
        assert!(set.contains(&7));
        assert!(![1, 2, 3].iter().any(|v| set.contains(v)));
    }

    #[test]
    fn tiny_vocabulary_uses_every_eligible_item() {
        let mut r = rng::stream(5, 0);
        let c = sample_candidates(10, &[1], 2, 99, &mut r);
        assert_eq!(c.len(), 9);
    }

    #[test]
    fn slice_boundaries() {
        let mut o = outcome(1);
        o.prefix_len = 7;
        assert!(Slice::Short.contains(&o, &[3], 5));
        assert!(Slice::Cold.contains(&o, &[3], 5));
        o.prefix_len = 8;
        assert!(Slice::Long.contains(&o, &[6], 5));
        assert!(Slice::Warm.contains(&o, &[6], 5));
    }

    #[test]
    fn empty_slice_is_absent() {
        let report = MetricReport::build(&[outcome(2)], &[5], &[10], 5).unwrap();
        assert!(report.get(Metric::HitRate, 5, Slice::Long).is_none());
        assert_eq!(report.get(Metric::HitRate, 5, Slice::Short), Some(1.0));
        assert!(report.to_csv().starts_with("metric,K,slice,value\nHitRate,5,all,1\n"));
    }
}
