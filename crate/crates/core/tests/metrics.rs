use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sgrec::eval::*;
use sgrec_tensor::rng;

/// Rank by sorting: candidates ordered by descending score, ties broken by
/// list position, then the target's 1-based position.
fn sorted_rank(scores: &[f64], candidates: &[usize], target: usize) -> usize {
    let mut order: Vec<(usize, usize)> = candidates.iter().copied().enumerate().collect();
    order.sort_by(|a, b| scores[b.1].partial_cmp(&scores[a.1]).unwrap().then(a.0.cmp(&b.0)));
    order.iter().position(|&(_, c)| c == target).unwrap() + 1
}

fn random_outcomes(n: usize, seed: u64) -> Vec<RankedOutcome> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|i| {
            // coarse scores force plenty of ties
            let scores: Vec<f64> = (0..150).map(|_| r.random_range(0..20) as f64).collect();
            let target = r.random_range(0..150);
            let prefix: Vec<usize> = (0..r.random_range(1..12)).map(|_| r.random_range(0..150)).collect();
            let prefix: Vec<usize> = prefix.into_iter().filter(|&p| p != target).collect();
            let cands = sample_candidates(150, &prefix, target, 99, &mut r);
            let rank = rank_in(&scores, &cands, target);
            assert_eq!(rank, sorted_rank(&scores, &cands, target));
            RankedOutcome {
                example: i,
                target,
                prefix_len: prefix.len(),
                rank,
                candidates: cands.len(),
            }
        })
        .collect()
}

#[test]
fn metrics_match_brute_force_on_random_outcomes() {
    let outcomes = random_outcomes(1000, 17);
    for k in [5, 10, 20] {
        let n = outcomes.len() as f64;
        let mut hr = 0.0;
        let mut nd = 0.0;
        let mut rr = 0.0;
        for o in &outcomes {
            let cut: Vec<usize> = (1..=k).collect();
            if cut.contains(&o.rank) {
                hr += 1.0;
                nd += 1.0 / ((o.rank + 1) as f64).ln() * std::f64::consts::LN_2;
                rr += 1.0 / o.rank as f64;
            }
        }
        assert!((hit_rate(&outcomes, k).unwrap() - hr / n).abs() < 1e-12);
        assert!((ndcg(&outcomes, k).unwrap() - nd / n).abs() < 1e-12);
        assert!((mrr(&outcomes, k).unwrap() - rr / n).abs() < 1e-12);
    }
    for o in &outcomes {
        let one = std::slice::from_ref(o);
        for k in [5, 10, 20] {
            let (h, n, m) = (hit_rate(one, k).unwrap(), ndcg(one, k).unwrap(), mrr(one, k).unwrap());
            assert!(m <= n && n <= h);
        }
    }
}

#[test]
fn candidates_exclude_history_and_hold_the_target_once() {
    let mut r = rng::stream(2, 0);
    for _ in 0..200 {
        let prefix: Vec<usize> = (0..8).map(|_| r.random_range(0..130)).collect();
        let target = loop {
            let t = r.random_range(0..130);
            if !prefix.contains(&t) {
                break t;
            }
        };
        let c = sample_candidates(130, &prefix, target, 99, &mut r);
        let mut sorted = c.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), c.len());
        assert_eq!(c.len(), 100);
        assert_eq!(c.iter().filter(|&&x| x == target).count(), 1);
        assert!(c.iter().all(|x| *x == target || !prefix.contains(x)));
    }
    // too few eligible items: every one of them is used
    let c = sample_candidates(10, &[0, 1], 2, 99, &mut r);
    assert_eq!(c.len(), 8);
}

#[test]
fn report_slices_partition_the_outcomes() {
    let mut outcomes = random_outcomes(300, 3);
    let mut r = rng::stream(3, 1);
    let counts: Vec<usize> = (0..150).map(|_| r.random_range(0..12)).collect();
    outcomes.shuffle(&mut r);
    let report = MetricReport::build(&outcomes, &[5, 10, 20], &counts, 5).unwrap();
    let n = |s| report.counts.iter().find(|c| c.0 == s).unwrap().1;
    assert_eq!(n(Slice::Short) + n(Slice::Long), outcomes.len());
    assert_eq!(n(Slice::Warm) + n(Slice::Cold), outcomes.len());
    let cold: Vec<RankedOutcome> = outcomes.iter().filter(|o| counts[o.target] <= 5).cloned().collect();
    assert_eq!(report.get(Metric::Ndcg, 10, Slice::Cold), Some(ndcg(&cold, 10).unwrap()));
    let csv = report.to_csv();
    assert!(csv.starts_with("metric,K,slice,value\n"));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

proptest! {
    #[test]
    fn rank_is_sorted_position(scores in prop::collection::vec(0i32..5, 30), target in 0usize..30, seed in 0u64..500) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let mut r = rng::stream(seed, 0);
        let c = sample_candidates(30, &[], target, 10, &mut r);
        prop_assert_eq!(rank_in(&scores, &c, target), sorted_rank(&scores, &c, target));
    }
}
