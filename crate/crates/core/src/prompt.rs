//! Instruction prompts mixing literal text with node and graph placeholders.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use sgrec_tensor::{rng, Stream};

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::graph::SessionGraph;
use crate::nn::Target;

pub const BEHAVIOR_PREFIX: &str =
    "Instruction: Please recommend a suitable next item according to the session graph and its corresponding nodes ";
pub const ALIGN_PREFIX: &str = "Instruction: Please tell me which node the textual information <";
pub const ALIGN_SUFFIX: &str = "> belongs to.\nResponse:";
pub const STRUCTURE_PREFIX: &str =
    "Instruction: Given a target node ID and a candidate node ID list, select the succeeding nodes of the target node ";
pub const PROMPT_SUFFIX: &str = ".\nResponse:";

/// Candidate-list length of structure prompts.
pub const DEFAULT_CANDIDATES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    /// Item index.
    Node(usize),
    /// Session whose graph embedding fills this position.
    Graph(Vec<usize>),
}

impl Segment {
    fn is_placeholder(&self) -> bool {
        !matches!(self, Segment::Text(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Behavior,
    Align,
    Structure,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Behavior => "BEHAVIOR",
            Task::Align => "ALIGN",
            Task::Structure => "STRUCTURE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub task: Task,
    pub segments: Vec<Segment>,
    pub target: Target,
}

impl PromptInstance {
    /// Human-readable text with `<G>` and `<V_i>` markers; adjacent
    /// placeholders are separated by one space.
    pub fn display(&self) -> String {
        let mut out = String::new();
        let mut prev_placeholder = false;
        for seg in &self.segments {
            if prev_placeholder && seg.is_placeholder() {
                out.push(' ');
            }
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Node(i) => out.push_str(&format!("<V_{i}>")),
                Segment::Graph(_) => out.push_str("<G>"),
            }
            prev_placeholder = seg.is_placeholder();
        }
        out
    }

    pub fn graph_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Graph(_))).count()
    }

    pub fn node_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Node(_))).count()
    }
}

/// Next-item prompt over the whole session. `graph_free` drops the graph
/// placeholder and nothing else.
pub fn render_behavior(session: &[usize], target: usize, graph_free: bool) -> Result<PromptInstance> {
    if session.is_empty() {
        return Err(Error::invalid("behavior prompt needs a nonempty session"));
    }
    let mut segments = vec![Segment::Text(BEHAVIOR_PREFIX.into())];
    if !graph_free {
        segments.push(Segment::Graph(session.to_vec()));
        segments.push(Segment::Text(" ".into()));
    }
    segments.extend(session.iter().map(|&v| Segment::Node(v)));
    segments.push(Segment::Text(PROMPT_SUFFIX.into()));
    Ok(PromptInstance {
        task: Task::Behavior,
        segments,
        target: Target::one_hot(target),
    })
}

/// Title-to-node alignment prompt.
pub fn render_alignment(item: usize, title: &str) -> PromptInstance {
    PromptInstance {
        task: Task::Align,
        segments: vec![
            Segment::Text(ALIGN_PREFIX.into()),
            Segment::Text(title.into()),
            Segment::Text(ALIGN_SUFFIX.into()),
        ],
        target: Target::one_hot(item),
    }
}

/// Successor-selection prompt for `target_slot` of `graph`. Candidates are
/// every successor plus distinct negatives drawn from `[0, num_items)` minus
/// the successors, shuffled.
pub fn render_structure(
    graph: &SessionGraph,
    target_slot: usize,
    num_items: usize,
    num_candidates: usize,
    rng: &mut impl Rng,
) -> Result<PromptInstance> {
    if target_slot >= graph.len() {
        return Err(Error::invalid(format!("slot {target_slot} outside the graph")));
    }
    let successors: Vec<usize> = graph
        .successors(target_slot)
        .into_iter()
        .map(|s| graph.nodes[s])
        .collect();
    if successors.is_empty() {
        return Err(Error::invalid(format!("slot {target_slot} has no successors")));
    }
    let excluded: BTreeSet<usize> = successors.iter().copied().collect();
    let eligible = num_items.saturating_sub(excluded.len());
    let wanted = num_candidates.saturating_sub(successors.len()).min(eligible);

    let mut negatives = BTreeSet::new();
    let mut candidates = successors.clone();
    while negatives.len() < wanted {
        let v = rng.random_range(0..num_items);
        if !excluded.contains(&v) && negatives.insert(v) {
            candidates.push(v);
        }
    }
    candidates.shuffle(rng);

    let mut segments = vec![
        Segment::Text(STRUCTURE_PREFIX.into()),
        Segment::Node(graph.nodes[target_slot]),
        Segment::Text(" ".into()),
    ];
    segments.extend(candidates.into_iter().map(Segment::Node));
    segments.push(Segment::Text(PROMPT_SUFFIX.into()));
    Ok(PromptInstance {
        task: Task::Structure,
        segments,
        target: Target::uniform(&successors),
    })
}

/// Slots eligible as structure targets: at least one successor, not the tail.
pub fn structure_slots(graph: &SessionGraph) -> Vec<usize> {
    let tail = graph.last_slot();
    (0..graph.len())
        .filter(|&s| s != tail && !graph.successors(s).is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    /// Alignment and structure prompts.
    Aux,
    /// Behavior prompts.
    Major,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Aux => "aux",
            Stage::Major => "major",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    pub graph_free: bool,
    pub num_candidates: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            graph_free: false,
            num_candidates: DEFAULT_CANDIDATES,
        }
    }
}

/// Shuffled instances for one stage. Aux holds one alignment prompt per item
/// and one structure prompt per eligible node of every training session;
/// Major holds one behavior prompt per training example.
pub fn build_tuning_corpus(
    split: &SplitDataset,
    titles: &[String],
    seed: u64,
    stage: Stage,
    opts: CorpusOptions,
) -> Result<Vec<PromptInstance>> {
    let m = split.num_items;
    let mut rng: Stream = rng::stream(seed, stage as u64);
    let mut out = Vec::new();
    match stage {
        Stage::Aux => {
            if titles.len() != m {
                return Err(Error::invalid(format!("{} titles for {m} items", titles.len())));
            }
            out.extend(titles.iter().enumerate().map(|(i, t)| render_alignment(i, t)));
            for session in &split.train_sessions {
                let graph = SessionGraph::build(session)?;
                for slot in structure_slots(&graph) {
                    out.push(render_structure(&graph, slot, m, opts.num_candidates, &mut rng)?);
                }
            }
        }
        Stage::Major => {
            for ex in &split.train {
                out.push(render_behavior(&ex.prefix, ex.target, opts.graph_free)?);
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: [usize; 5] = [1, 2, 3, 2, 4];

    #[test]
    fn behavior_keeps_repeats_in_order() {
        let p = render_behavior(&FIG2, 5, false).unwrap();
        let nodes: Vec<usize> = p
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Node(v) => Some(*v),
                _ => None,
            })
            .collect();
        assert_eq!(nodes, FIG2);
        assert_eq!(p.graph_count(), 1);
        assert_eq!(p.target, Target::one_hot(5));
    }

    #[test]
    fn graph_free_only_drops_the_graph() {
        let with = render_behavior(&FIG2, 5, false).unwrap();
        let without = render_behavior(&FIG2, 5, true).unwrap();
        assert_eq!(without.graph_count(), 0);
        let kept: Vec<_> = with
            .segments
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1 && *i != 2)
            .map(|(_, s)| s.clone())
            .collect();
        assert_eq!(kept, without.segments);
    }

    #[test]
    fn shared_titles_give_distinct_targets() {
        let a = render_alignment(0, "Same");
        let b = render_alignment(1, "Same");
        assert_eq!(a.segments, b.segments);
        assert_ne!(a.target, b.target);
        assert_eq!(a.target.entries().len(), 1);
    }

    #[test]
    fn structure_on_fig2_node_v2() {
        let g = SessionGraph::build(&FIG2).unwrap();
        let p = render_structure(&g, 1, 20, 10, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(p.target, Target::uniform(&[3, 4]));
        assert_eq!(p.node_count(), 11);
        let cands: Vec<usize> = p.segments[3..p.segments.len() - 1]
            .iter()
            .map(|s| match s {
                Segment::Node(v) => *v,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        let distinct: BTreeSet<_> = cands.iter().collect();
        assert_eq!(distinct.len(), 10);
        assert!(cands.contains(&3) && cands.contains(&4));
    }

    #[test]
    fn tail_is_never_a_structure_target() {
        let g = SessionGraph::build(&FIG2).unwrap();
        assert_eq!(structure_slots(&g), vec![0, 1, 2]);
        assert!(structure_slots(&SessionGraph::build(&[9]).unwrap()).is_empty());
    }
}
