//! Generated interaction logs with known structure.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use sgrec_tensor::rng;

use crate::dataset::{InteractionRecord, ItemCatalog};

#[derive(Debug, Clone)]
pub struct SyntheticLog {
    pub records: Vec<InteractionRecord>,
    pub catalog: ItemCatalog,
    /// `titles[i]` for item id `item_id(i)`.
    pub titles: Vec<String>,
}

/// Zero-padded ids so lexicographic order matches numeric order.
pub fn item_id(i: usize) -> String {
    format!("i{i:04}")
}

fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

impl SyntheticLog {
    fn from_sessions(sessions: Vec<Vec<usize>>, titles: Vec<String>) -> Self {
        let mut records = Vec::new();
        for (u, s) in sessions.iter().enumerate() {
            for (t, &v) in s.iter().enumerate() {
                records.push(InteractionRecord {
                    user: user_id(u),
                    item: item_id(v),
                    timestamp: 1_600_000_000 + (u * 1000 + t) as u64,
                });
            }
        }
        let mut catalog = ItemCatalog::new();
        for (i, t) in titles.iter().enumerate() {
            catalog.insert(item_id(i), t.clone());
        }
        Self {
            records,
            catalog,
            titles,
        }
    }

    pub fn interactions_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            writeln!(s, "{}\t{}\t{}", r.user, r.item, r.timestamp).unwrap();
        }
        s
    }

    pub fn catalog_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.titles.iter().enumerate() {
            writeln!(s, "{}\t{t}", item_id(i)).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkovSpec {
    pub items: usize,
    pub users: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for MarkovSpec {
    fn default() -> Self {
        Self {
            items: 200,
            users: 2000,
            min_len: 5,
            max_len: 8,
        }
    }
}

/// Deterministic first-order chains: a random single cycle over the items
/// fixes each item's successor, and every session walks it from a uniform
/// start. Returns the log and the successor table.
pub fn markov(spec: MarkovSpec, seed: u64) -> (SyntheticLog, Vec<usize>) {
    let mut r = rng::stream(seed, 0);
    let mut cycle: Vec<usize> = (0..spec.items).collect();
    cycle.shuffle(&mut r);
    let mut successor = vec![0; spec.items];
    for w in 0..spec.items {
        successor[cycle[w]] = cycle[(w + 1) % spec.items];
    }
    let sessions = (0..spec.users)
        .map(|_| {
            let len = r.random_range(spec.min_len..=spec.max_len);
            let mut v = r.random_range(0..spec.items);
            let mut s = Vec::with_capacity(len);
            for _ in 0..len {
                s.push(v);
                v = successor[v];
            }
            s
        })
        .collect();
    let titles = (0..spec.items).map(|i| format!("Catalog Item {i}")).collect();
    (SyntheticLog::from_sessions(sessions, titles), successor)
}

const GROUP_WORDS: [&str; 12] = [
    "amber", "cobalt", "crimson", "ivory", "jade", "onyx", "scarlet", "teal", "umber", "violet", "walnut", "zinc",
];
const NOUNS: [&str; 10] = [
    "stand", "cable", "pedal", "strap", "case", "tuner", "capo", "stool", "mount", "clamp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupedSpec {
    pub groups: usize,
    pub items_per_group: usize,
    pub users: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for GroupedSpec {
    fn default() -> Self {
        Self {
            groups: 6,
            items_per_group: 10,
            users: 400,
            min_len: 6,
            max_len: 9,
        }
    }
}

/// Items fall into groups; the successor of an item is drawn uniformly from
/// the next group. Each title names the group its successors come from, so
/// the text predicts the next group.
pub fn grouped(spec: GroupedSpec, seed: u64) -> SyntheticLog {
    assert!(spec.groups <= GROUP_WORDS.len(), "at most {} groups", GROUP_WORDS.len());
    let mut r = rng::stream(seed, 0);
    let items = spec.groups * spec.items_per_group;
    let group = |v: usize| v / spec.items_per_group;
    let sessions = (0..spec.users)
        .map(|_| {
            let len = r.random_range(spec.min_len..=spec.max_len);
            let mut v = r.random_range(0..items);
            let mut s = Vec::with_capacity(len);
            for _ in 0..len {
                s.push(v);
                let next = (group(v) + 1) % spec.groups;
                v = next * spec.items_per_group + r.random_range(0..spec.items_per_group);
            }
            s
        })
        .collect();
    let titles = (0..items)
        .map(|v| {
            let next = (group(v) + 1) % spec.groups;
            format!(
                "{} {} leads to {}",
                GROUP_WORDS[group(v)],
                NOUNS[v % spec.items_per_group % NOUNS.len()],
                GROUP_WORDS[next]
            )
        })
        .collect();
    SyntheticLog::from_sessions(sessions, titles)
}
