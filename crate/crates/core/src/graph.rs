//! Directed session graphs with row-normalized in/out adjacency.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// How repeated transitions are weighted before row normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Adjacency {
    /// `count(i→j) / outdeg(i)`.
    #[default]
    Weighted,
    /// Every distinct edge counts once.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionGraph {
    /// Distinct items in first-occurrence order.
    pub nodes: Vec<usize>,
    /// Node slot of each sequence position.
    pub alias: Vec<usize>,
    /// Slot pairs of consecutive positions, in sequence order.
    pub edges: Vec<(usize, usize)>,
    /// Row-major `u × u`.
    pub a_out: Vec<f64>,
    /// Row-major `u × u`.
    pub a_in: Vec<f64>,
}

impl SessionGraph {
    pub fn build(session: &[usize]) -> Result<Self> {
        Self::build_with(session, Adjacency::Weighted)
    }

    pub fn build_with(session: &[usize], mode: Adjacency) -> Result<Self> {
        if session.is_empty() {
            return Err(Error::invalid("cannot build a graph from an empty session"));
        }
        let mut nodes = Vec::new();
        let mut slot_of = BTreeMap::new();
        let alias: Vec<usize> = session
            .iter()
            .map(|&v| {
                *slot_of.entry(v).or_insert_with(|| {
                    nodes.push(v);
                    nodes.len() - 1
                })
            })
            .collect();
        let edges: Vec<(usize, usize)> = alias.windows(2).map(|w| (w[0], w[1])).collect();

        let u = nodes.len();
        let mut counts = vec![0.0; u * u];
        for &(s, d) in &edges {
            match mode {
                Adjacency::Weighted => counts[s * u + d] += 1.0,
                Adjacency::Binary => counts[s * u + d] = 1.0,
            }
        }
        let mut reversed = vec![0.0; u * u];
        for i in 0..u {
            for j in 0..u {
                reversed[j * u + i] = counts[i * u + j];
            }
        }
        Ok(Self {
            nodes,
            alias,
            edges,
            a_out: normalize_rows(counts, u),
            a_in: normalize_rows(reversed, u),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Slot of the final sequence position.
    pub fn last_slot(&self) -> usize {
        *self.alias.last().expect("graphs are never empty")
    }

    /// Distinct successor slots of `slot`, in first-edge order.
    pub fn successors(&self, slot: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(s, d) in &self.edges {
            if s == slot && !out.contains(&d) {
                out.push(d);
            }
        }
        out
    }

    /// Distinct `(src, dst)` pairs with multiplicity, in first-edge order.
    pub fn edge_counts(&self) -> Vec<((usize, usize), usize)> {
        let mut out: Vec<((usize, usize), usize)> = Vec::new();
        for &e in &self.edges {
            match out.iter_mut().find(|(k, _)| *k == e) {
                Some((_, c)) => *c += 1,
                None => out.push((e, 1)),
            }
        }
        out
    }

    /// One `src -> dst x count` line per distinct edge.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for ((a, b), c) in self.edge_counts() {
            writeln!(s, "{a} -> {b} x {c}").unwrap();
        }
        s
    }
}

fn normalize_rows(mut m: Vec<f64>, u: usize) -> Vec<f64> {
    for row in m.chunks_mut(u) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_sequence() {
        // v1..v4 as indices 1..4
        let g = SessionGraph::build(&[1, 2, 3, 2, 4]).unwrap();
        assert_eq!(g.nodes, vec![1, 2, 3, 4]);
        assert_eq!(g.alias, vec![0, 1, 2, 1, 3]);
        assert_eq!(g.edges, vec![(0, 1), (1, 2), (2, 1), (1, 3)]);
        assert_eq!(g.dump(), "0 -> 1 x 1\n1 -> 2 x 1\n2 -> 1 x 1\n1 -> 3 x 1\n");
        assert_eq!(g.successors(1), vec![2, 3]);
        assert_eq!(&g.a_out[4..8], &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn single_item_has_no_edges() {
        let g = SessionGraph::build(&[7]).unwrap();
        assert_eq!(g.nodes, vec![7]);
        assert!(g.edges.is_empty());
        assert_eq!(g.a_out, vec![0.0]);
        assert_eq!(g.a_in, vec![0.0]);
    }

    #[test]
    fn repeated_transitions_are_weighted() {
        let g = SessionGraph::build(&[5, 9, 5, 9]).unwrap();
        assert_eq!(g.edge_counts(), vec![((0, 1), 2), ((1, 0), 1)]);
        assert_eq!(&g.a_out[0..2], &[0.0, 1.0]);
        // in-edges of a: only from b; in-edges of b: twice from a
        assert_eq!(g.a_in, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn immediate_repeat_is_a_self_loop() {
        let g = SessionGraph::build(&[3, 3, 4]).unwrap();
        assert_eq!(g.edges, vec![(0, 0), (0, 1)]);
        assert_eq!(&g.a_out[0..2], &[0.5, 0.5]);
    }

    #[test]
    fn binary_mode_ignores_multiplicity() {
        let g = SessionGraph::build_with(&[1, 2, 1, 2, 3], Adjacency::Binary).unwrap();
        assert_eq!(&g.a_out[3..6], &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn empty_session_is_rejected() {
        assert!(SessionGraph::build(&[]).is_err());
    }
}
