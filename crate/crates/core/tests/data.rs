use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use sgrec::dataset::*;

fn rec(u: usize, i: usize, t: u64) -> InteractionRecord {
    InteractionRecord {
        user: format!("u{u}"),
        item: format!("x{i}"),
        timestamp: t,
    }
}

fn log_from(pairs: &[(usize, usize)]) -> Vec<InteractionRecord> {
    pairs.iter().enumerate().map(|(t, &(u, i))| rec(u, i, t as u64)).collect()
}

/// Repeatedly strips whichever side is below threshold, one side at a time.
fn filter_oracle(records: &[InteractionRecord], min: usize) -> Vec<InteractionRecord> {
    let mut cur = records.to_vec();
    loop {
        let before = cur.len();
        let mut uc = BTreeMap::<String, usize>::new();
        for r in &cur {
            *uc.entry(r.user.clone()).or_default() += 1;
        }
        cur.retain(|r| uc[&r.user] >= min);
        let mut ic = BTreeMap::<String, usize>::new();
        for r in &cur {
            *ic.entry(r.item.clone()).or_default() += 1;
        }
        cur.retain(|r| ic[&r.item] >= min);
        if cur.len() == before {
            return cur;
        }
    }
}

#[test]
fn removal_cascades_through_a_chain() {
    // u0 has 3 interactions; dropping it takes item x9 under the bar, which
    // in turn takes u1 under the bar.
    let mut pairs = vec![(0, 9), (0, 1), (0, 2)];
    pairs.extend([(1, 9), (1, 9), (1, 3)]);
    pairs.extend((0..6).map(|k| (2 + k % 2, 4 + k % 2)));
    let kept = filter_inactive(&log_from(&pairs), 3).unwrap();
    let users: BTreeSet<_> = kept.iter().map(|r| r.user.as_str()).collect();
    assert_eq!(users, BTreeSet::from(["u2", "u3"]));
}

#[test]
fn nothing_surviving_is_an_error_that_suggests_a_lower_threshold() {
    let err = filter_inactive(&log_from(&[(0, 0), (1, 1)]), 2).unwrap_err();
    assert!(err.to_string().contains("lower threshold"), "{err}");
}

#[test]
fn malformed_lines_are_reported_with_their_position() {
    let err = parse_interactions("u1\ti1\t5\nu1\ti2\n", "log.tsv").unwrap_err();
    assert!(err.to_string().starts_with("log.tsv:2:"), "{err}");
}

proptest! {
    #[test]
    fn filter_agrees_with_oracle_and_is_idempotent(
        pairs in prop::collection::vec((0usize..8, 0usize..8), 1..120),
        min in 1usize..5,
    ) {
        let log = log_from(&pairs);
        let expected = filter_oracle(&log, min);
        match filter_inactive(&log, min) {
            Ok(kept) => {
                prop_assert_eq!(&kept, &expected);
                prop_assert_eq!(filter_inactive(&kept, min).unwrap(), kept);
            }
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }

    #[test]
    fn vocabulary_round_trips(ids in prop::collection::btree_set("[a-z]{1,6}", 1..40)) {
        let log: Vec<_> = ids.iter().enumerate().map(|(t, i)| InteractionRecord {
            user: "u".into(), item: i.clone(), timestamp: t as u64,
        }).collect();
        let vocab = Vocabulary::from_records(&log);
        prop_assert_eq!(vocab.len(), ids.len());
        for (k, id) in ids.iter().enumerate() {
            prop_assert_eq!(vocab.index(id), Some(k));
            prop_assert_eq!(vocab.id(k), id.as_str());
        }
    }

    #[test]
    fn leave_one_out_partitions_each_sequence(
        seqs in prop::collection::vec(prop::collection::vec(0usize..30, 0..12), 1..20),
        max_len in 1usize..8,
    ) {
        let Ok(split) = split_leave_one_out(&seqs, 30, max_len) else {
            prop_assert!(seqs.iter().all(|s| s.len() < 3));
            return Ok(());
        };
        let long: Vec<&Vec<usize>> = seqs.iter().filter(|s| s.len() >= 3).collect();
        prop_assert_eq!(split.skipped_users, seqs.len() - long.len());
        prop_assert_eq!(split.test.len(), long.len());
        let mut counts = vec![0; 30];
        for (u, s) in long.iter().enumerate() {
            let n = s.len();
            let t = &split.test[u];
            let v = &split.valid[u];
            prop_assert_eq!(t.target, s[n - 1]);
            prop_assert_eq!(v.target, s[n - 2]);
            prop_assert!(t.prefix.len() <= max_len && v.prefix.len() <= max_len);
            prop_assert!(s[..n - 1].ends_with(&t.prefix));
            prop_assert_eq!(&split.train_sessions[u], &s[..n - 2].to_vec());
            let train: Vec<_> = split.train.iter().filter(|e| e.user == u).collect();
            prop_assert_eq!(train.len(), n - 3);
            for (k, e) in train.iter().enumerate() {
                // training targets never reach the held-out positions
                prop_assert_eq!(e.target, s[k + 1]);
                prop_assert!(s[..k + 1].ends_with(&e.prefix));
            }
            for &x in &s[..n - 2] {
                counts[x] += 1;
            }
        }
        prop_assert_eq!(split.item_train_counts, counts);
    }
}
