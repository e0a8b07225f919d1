use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use sgrec::dataset::split_leave_one_out;
use sgrec::graph::SessionGraph;
use sgrec::prompt::*;
use sgrec_tensor::rng;

const FIG2: [usize; 5] = [1, 2, 3, 2, 4];

/// Compares against `tests/golden/<name>`; set `SGREC_BLESS=1` to rewrite.
fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("SGREC_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from its golden file");
}

#[test]
fn behavior_prompt_for_the_example_session() {
    let p = render_behavior(&FIG2, 5, false).unwrap();
    let text = p.display();
    assert!(text.contains("Please recommend a suitable next item"));
    golden("behavior.txt", &text);
}

#[test]
fn alignment_prompt_for_one_item() {
    golden("align.txt", &render_alignment(2, "Nylon Guitar Strap, Black").display());
}

#[test]
fn structure_prompt_for_the_repeated_node() {
    let g = SessionGraph::build(&FIG2).unwrap();
    let slot = g.alias[1];
    let p = render_structure(&g, slot, 12, DEFAULT_CANDIDATES, &mut rng::stream(7, 0)).unwrap();
    golden("structure.txt", &p.display());
    assert_eq!(p.target.entries(), &[(3, 0.5), (4, 0.5)]);
}

#[test]
fn aux_and_major_corpora_have_the_expected_composition() {
    let seqs = vec![vec![0, 1, 2, 1, 3, 4, 5], vec![5, 4, 3, 2], vec![2, 2, 2]];
    let split = split_leave_one_out(&seqs, 6, 50).unwrap();
    let titles: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
    let opts = CorpusOptions::default();
    let aux = build_tuning_corpus(&split, &titles, 1, Stage::Aux, opts).unwrap();
    let slots: usize = split
        .train_sessions
        .iter()
        .map(|s| structure_slots(&SessionGraph::build(s).unwrap()).len())
        .sum();
    assert_eq!(aux.iter().filter(|p| p.task == Task::Align).count(), 6);
    assert_eq!(aux.iter().filter(|p| p.task == Task::Structure).count(), slots);
    let major = build_tuning_corpus(&split, &titles, 1, Stage::Major, opts).unwrap();
    assert_eq!(major.len(), split.train.len());
    assert!(major.iter().all(|p| p.task == Task::Behavior && p.graph_count() == 1));
    // same seed, same order
    assert_eq!(aux, build_tuning_corpus(&split, &titles, 1, Stage::Aux, opts).unwrap());
}

proptest! {
    #[test]
    fn structure_prompts_list_every_successor_and_only_foreign_negatives(
        seq in prop::collection::vec(0usize..15, 2..12),
        num_candidates in 1usize..14,
        seed in 0u64..1000,
    ) {
        let g = SessionGraph::build(&seq).unwrap();
        for slot in structure_slots(&g) {
            let item = g.nodes[slot];
            let successors: BTreeSet<usize> = seq.windows(2).filter(|w| w[0] == item).map(|w| w[1]).collect();
            let p = render_structure(&g, slot, 15, num_candidates, &mut rng::stream(seed, slot as u64)).unwrap();
            let nodes: Vec<usize> = p.segments.iter().filter_map(|s| match s {
                Segment::Node(v) => Some(*v),
                _ => None,
            }).collect();
            prop_assert_eq!(nodes[0], item);
            let cands = &nodes[1..];
            let distinct: BTreeSet<usize> = cands.iter().copied().collect();
            prop_assert_eq!(distinct.len(), cands.len());
            prop_assert!(successors.is_subset(&distinct));
            prop_assert_eq!(cands.len(), num_candidates.max(successors.len()).min(15));
            let support: BTreeSet<usize> = p.target.support().collect();
            prop_assert_eq!(&support, &successors);
            let w = 1.0 / successors.len() as f64;
            prop_assert!(p.target.entries().iter().all(|&(_, x)| (x - w).abs() < 1e-15));
        }
    }
}
