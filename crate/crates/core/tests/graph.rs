use proptest::prelude::*;
use sgrec::graph::{Adjacency, SessionGraph};

#[test]
fn repeated_pair_keeps_edge_multiplicity() {
    let g = SessionGraph::build(&[7, 8, 7, 8]).unwrap();
    assert_eq!(g.nodes, vec![7, 8]);
    assert_eq!(g.edge_counts(), vec![((0, 1), 2), ((1, 0), 1)]);
    assert_eq!(g.a_out, vec![0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn binary_mode_ignores_multiplicity() {
    let w = SessionGraph::build_with(&[1, 2, 1, 3, 1, 2], Adjacency::Weighted).unwrap();
    let b = SessionGraph::build_with(&[1, 2, 1, 3, 1, 2], Adjacency::Binary).unwrap();
    // node 1 goes to 2 twice and to 3 once
    assert!((w.a_out[1] - 2.0 / 3.0).abs() < 1e-12);
    assert!((b.a_out[1] - 0.5).abs() < 1e-12);
}

fn relabel(seq: &[usize], perm: &[usize]) -> Vec<usize> {
    seq.iter().map(|&v| perm[v]).collect()
}

proptest! {
    #[test]
    fn graph_invariants(seq in prop::collection::vec(0usize..6, 1..15)) {
        let g = SessionGraph::build(&seq).unwrap();
        let u = g.len();
        let back: Vec<usize> = g.alias.iter().map(|&s| g.nodes[s]).collect();
        prop_assert_eq!(&back, &seq);
        prop_assert_eq!(g.edges.len(), seq.len() - 1);
        for a in [&g.a_out, &g.a_in] {
            for row in a.chunks(u) {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
        // incoming rows see exactly the transpose pattern of outgoing rows
        for i in 0..u {
            for j in 0..u {
                prop_assert_eq!(g.a_out[i * u + j] > 0.0, g.a_in[j * u + i] > 0.0);
            }
        }
    }

    #[test]
    fn relabeling_items_leaves_the_structure_unchanged(seq in prop::collection::vec(0usize..6, 1..15)) {
        let perm = [3, 5, 0, 1, 4, 2];
        let g = SessionGraph::build(&seq).unwrap();
        let h = SessionGraph::build(&relabel(&seq, &perm)).unwrap();
        prop_assert_eq!(&h.alias, &g.alias);
        prop_assert_eq!(&h.a_out, &g.a_out);
        prop_assert_eq!(&h.a_in, &g.a_in);
        prop_assert_eq!(h.nodes, relabel(&g.nodes, &perm));
    }
}
