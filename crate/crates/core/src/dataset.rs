//! Interaction-log ingestion, activity filtering and the leave-one-out split.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of most recent items kept in any prefix.
pub const MAX_SEQUENCE_LEN: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

/// Item titles keyed by external item id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemCatalog {
    titles: HashMap<String, String>,
}

impl ItemCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, item: impl Into<String>, title: impl Into<String>) {
        self.titles.insert(item.into(), title.into());
    }

    pub fn title(&self, item: &str) -> Option<&str> {
        self.titles.get(item).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }
}

/// Parses `user<TAB>item<TAB>timestamp` lines. Blank lines are skipped.
/// The result is ordered by user, then timestamp; ties keep file order.
pub fn parse_interactions(text: &str, source: &str) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let timestamp = fields[2]
            .trim()
            .parse::<u64>()
            .map_err(|e| err(format!("bad timestamp `{}`: {e}", fields[2])))?;
        records.push(InteractionRecord {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    // Stable: equal (user, timestamp) keys stay in file order.
    records.sort_by(|a, b| a.user.cmp(&b.user).then(a.timestamp.cmp(&b.timestamp)));
    Ok(records)
}

/// Parses `item<TAB>title` lines.
pub fn parse_catalog(text: &str, source: &str) -> Result<ItemCatalog> {
    let mut catalog = ItemCatalog::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some((item, title)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                reason: "expected `item<TAB>title`".into(),
            });
        };
        catalog.insert(item.trim(), title.trim());
    }
    Ok(catalog)
}

pub fn ingest(path: impl AsRef<Path>, catalog_path: Option<&Path>) -> Result<(Vec<InteractionRecord>, ItemCatalog)> {
    let path = path.as_ref();
    let records = parse_interactions(&fs::read_to_string(path)?, &path.display().to_string())?;
    let catalog = match catalog_path {
        Some(p) => parse_catalog(&fs::read_to_string(p)?, &p.display().to_string())?,
        None => ItemCatalog::new(),
    };
    Ok((records, catalog))
}

/// Drops users and items with fewer than `min_count` interactions, repeating
/// until both constraints hold simultaneously.
pub fn filter_inactive(records: &[InteractionRecord], min_count: usize) -> Result<Vec<InteractionRecord>> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut current: Vec<InteractionRecord> = records.to_vec();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &current {
            *users.entry(&r.user).or_default() += 1;
            *items.entry(&r.item).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|r| users[r.user.as_str()] >= min_count && items[r.item.as_str()] >= min_count)
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut k = keep.into_iter();
        current.retain(|_| k.next().unwrap());
    }
    if current.is_empty() {
        return Err(Error::invalid(format!(
            "no interactions survive filtering at min_count {min_count}; try a lower threshold"
        )));
    }
    Ok(current)
}

/// Dense item indexing over `[0, m)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    ids: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Indexes distinct ids in lexicographic order.
    pub fn from_records(records: &[InteractionRecord]) -> Self {
        let mut ids: Vec<String> = records.iter().map(|r| r.item.clone()).collect();
        ids.sort();
        ids.dedup();
        Self::from_ids(ids)
    }

    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Titles aligned with vocabulary indices; missing titles become
/// `item <index>`.
pub fn resolve_titles(vocab: &Vocabulary, catalog: &ItemCatalog) -> Vec<String> {
    (0..vocab.len())
        .map(|i| match catalog.title(vocab.id(i)) {
            Some(t) if !t.trim().is_empty() => t.to_string(),
            _ => format!("item {i}"),
        })
        .collect()
}

/// Per-user item-index sequences in chronological order, ordered by user id.
pub fn user_sequences(records: &[InteractionRecord], vocab: &Vocabulary) -> Vec<(String, Vec<usize>)> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in records {
        if let Some(ix) = vocab.index(&r.item) {
            by_user.entry(&r.user).or_default().push(ix);
        }
    }
    by_user.into_iter().map(|(u, s)| (u.to_string(), s)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    /// Ordinal of the user in the split.
    pub user: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub num_items: usize,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    /// Training portion `[v1 .. v(n-2)]` of every user.
    pub train_sessions: Vec<Vec<usize>>,
    /// Occurrences of each item across training portions.
    pub item_train_counts: Vec<usize>,
    /// Users dropped for having fewer than three interactions.
    pub skipped_users: usize,
}

fn truncate(prefix: &[usize], max_len: usize) -> Vec<usize> {
    prefix[prefix.len().saturating_sub(max_len)..].to_vec()
}

/// Leave-one-out: the last item is the test target, the second to last the
/// validation target, and every prefix of the remaining items predicts its
/// successor.
pub fn split_leave_one_out(sequences: &[Vec<usize>], num_items: usize, max_len: usize) -> Result<SplitDataset> {
    let mut split = SplitDataset {
        num_items,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        train_sessions: Vec::new(),
        item_train_counts: vec![0; num_items],
        skipped_users: 0,
    };
    for seq in sequences {
        if let Some(&bad) = seq.iter().find(|&&v| v >= num_items) {
            return Err(Error::invalid(format!("item index {bad} outside [0, {num_items})")));
        }
        let n = seq.len();
        if n < 3 {
            split.skipped_users += 1;
            continue;
        }
        let user = split.train_sessions.len();
        let train_part = &seq[..n - 2];
        for k in 1..train_part.len() {
            split.train.push(Example {
                user,
                prefix: truncate(&train_part[..k], max_len),
                target: train_part[k],
            });
        }
        for &v in train_part {
            split.item_train_counts[v] += 1;
        }
        split.valid.push(Example {
            user,
            prefix: truncate(&seq[..n - 2], max_len),
            target: seq[n - 2],
        });
        split.test.push(Example {
            user,
            prefix: truncate(&seq[..n - 1], max_len),
            target: seq[n - 1],
        });
        split.train_sessions.push(train_part.to_vec());
    }
    if split.train_sessions.is_empty() {
        return Err(Error::invalid("no user has the three interactions leave-one-out needs"));
    }
    Ok(split)
}

/// Dataset summary in the usual users/items/length/sparsity/actions layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub average_length: f64,
    pub sparsity: f64,
    pub actions: usize,
}

impl DatasetStats {
    pub fn of(records: &[InteractionRecord]) -> Self {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, ()> = HashMap::new();
        for r in records {
            *users.entry(&r.user).or_default() += 1;
            items.insert(&r.item, ());
        }
        let actions = records.len();
        let (u, m) = (users.len(), items.len());
        let average_length = if u == 0 { 0.0 } else { actions as f64 / u as f64 };
        let sparsity = if u == 0 || m == 0 {
            0.0
        } else {
            1.0 - actions as f64 / (u as f64 * m as f64)
        };
        Self {
            users: u,
            items: m,
            average_length,
            sparsity,
            actions,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "#Users\t{}\n#Items\t{}\n#Average Length\t{:.2}\n#Sparsity\t{:.2}%\n#Actions\t{}\n",
            self.users,
            self.items,
            self.average_length,
            self.sparsity * 100.0,
            self.actions
        )
    }
}

/// Everything the training stages need from a raw log.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub titles: Vec<String>,
    pub sequences: Vec<(String, Vec<usize>)>,
    pub split: SplitDataset,
    pub stats: DatasetStats,
}

pub fn prepare(records: &[InteractionRecord], catalog: &ItemCatalog, min_count: usize, max_len: usize) -> Result<PreparedData> {
    let filtered = filter_inactive(records, min_count)?;
    let vocab = Vocabulary::from_records(&filtered);
    let titles = resolve_titles(&vocab, catalog);
    let sequences = user_sequences(&filtered, &vocab);
    let seqs: Vec<Vec<usize>> = sequences.iter().map(|(_, s)| s.clone()).collect();
    let split = split_leave_one_out(&seqs, vocab.len(), max_len)?;
    let stats = DatasetStats::of(&filtered);
    Ok(PreparedData {
        vocab,
        titles,
        sequences,
        split,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, item: &str, t: u64) -> InteractionRecord {
        InteractionRecord {
            user: user.into(),
            item: item.into(),
            timestamp: t,
        }
    }

    #[test]
    fn parses_well_formed_lines() {
        let recs = parse_interactions("u1\ta\t3\nu1\tb\t1\nu2\ta\t2\n", "log").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0], rec("u1", "b", 1));
        assert_eq!(recs[2], rec("u2", "a", 2));
    }

    #[test]
    fn malformed_line_names_its_number() {
        let err = parse_interactions("u1\ta\t3\nu1\tb\n", "log.tsv").unwrap_err();
        match err {
            Error::Parse { path, line, .. } => {
                assert_eq!(path, "log.tsv");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(parse_interactions("u1\ta\t-4\n", "x").is_err());
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let recs = parse_interactions("u\tz\t5\nu\ta\t5\nu\tm\t5\n", "log").unwrap();
        let items: Vec<_> = recs.iter().map(|r| r.item.as_str()).collect();
        assert_eq!(items, ["z", "a", "m"]);
    }

    #[test]
    fn duplicate_interactions_are_kept() {
        let recs = parse_interactions("u\ta\t1\nu\ta\t1\n", "log").unwrap();
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn inactive_user_is_removed() {
        let mut recs: Vec<_> = (0..5).map(|t| rec("active", &format!("i{t}"), t)).collect();
        recs.extend((0..4).map(|t| rec("lazy", &format!("i{t}"), t)));
        let out = filter_inactive(&recs, 1).unwrap();
        assert_eq!(out, recs);
        // With min_count 5 the items themselves fall below threshold too.
        assert!(filter_inactive(&recs, 5).is_err());
    }

    #[test]
    fn empty_result_advises_lower_threshold() {
        let recs = vec![rec("u", "a", 1)];
        let msg = filter_inactive(&recs, 2).unwrap_err().to_string();
        assert!(msg.contains("lower threshold"), "{msg}");
    }

    #[test]
    fn leave_one_out_on_four_items() {
        let split = split_leave_one_out(&[vec![0, 1, 2, 3]], 4, 50).unwrap();
        assert_eq!(
            split.train,
            vec![Example {
                user: 0,
                prefix: vec![0],
                target: 1
            }]
        );
        assert_eq!(split.valid[0].prefix, vec![0, 1]);
        assert_eq!(split.valid[0].target, 2);
        assert_eq!(split.test[0].prefix, vec![0, 1, 2]);
        assert_eq!(split.test[0].target, 3);
        assert_eq!(split.item_train_counts, vec![1, 1, 0, 0]);
    }

    #[test]
    fn three_interactions_give_no_training_pairs() {
        let split = split_leave_one_out(&[vec![0, 1, 2], vec![1, 2]], 3, 50).unwrap();
        assert!(split.train.is_empty());
        assert_eq!(split.valid.len(), 1);
        assert_eq!(split.test.len(), 1);
        assert_eq!(split.skipped_users, 1);
    }

    #[test]
    fn long_prefixes_keep_the_most_recent_items() {
        let seq: Vec<usize> = (0..60).map(|i| i % 7).collect();
        let split = split_leave_one_out(&[seq.clone()], 7, 50).unwrap();
        assert_eq!(split.test[0].prefix.len(), 50);
        assert_eq!(split.test[0].prefix, seq[9..59].to_vec());
        assert!(split.train.iter().all(|e| e.prefix.len() <= 50));
    }

    #[test]
    fn missing_titles_are_synthesized() {
        let vocab = Vocabulary::from_ids(vec!["a".into(), "b".into()]);
        let mut cat = ItemCatalog::new();
        cat.insert("b", "Seagull Pro-G Guitar Stand");
        let titles = resolve_titles(&vocab, &cat);
        assert_eq!(titles, ["item 0", "Seagull Pro-G Guitar Stand"]);
    }

    #[test]
    fn stats_follow_the_table_schema() {
        let recs = vec![rec("u1", "a", 1), rec("u1", "b", 2), rec("u2", "a", 1)];
        let s = DatasetStats::of(&recs);
        assert_eq!((s.users, s.items, s.actions), (2, 2, 3));
        assert!((s.average_length - 1.5).abs() < 1e-12);
        assert!((s.sparsity - 0.25).abs() < 1e-12);
    }
}
