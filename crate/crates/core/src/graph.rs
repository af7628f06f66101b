//! Document graphs and candidate-pair enumeration.
//!
//! Two independent settings live here: the [`Structure`] the GNN aggregates
//! over while learning, and the [`WindowPolicy`] that decides which sentence
//! pairs are classified.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub type Edge = (usize, usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Every sentence connects to each later sentence within the window.
    #[default]
    SemiComplete,
    /// Every sentence connects only to its successor.
    Linear,
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi-complete" | "sc" => Ok(Structure::SemiComplete),
            "linear" | "l" => Ok(Structure::Linear),
            other => Err(Error::Config(format!("unknown structure '{other}'"))),
        }
    }
}

/// How far ahead each sentence is compared. `Span(s)` looks at the next `s`
/// sentences; `All` compares every forward pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WindowPolicy {
    Span(usize),
    #[default]
    All,
}

impl WindowPolicy {
    pub const W3: WindowPolicy = WindowPolicy::Span(3);
    pub const W4: WindowPolicy = WindowPolicy::Span(4);
    pub const W5: WindowPolicy = WindowPolicy::Span(5);

    pub fn span(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("window span must be at least 1".into()));
        }
        Ok(WindowPolicy::Span(s))
    }

    /// Effective span for a document of `n` sentences, capped at `n - 1`.
    pub fn effective_span(self, n: usize) -> usize {
        let cap = n.saturating_sub(1);
        match self {
            WindowPolicy::Span(s) => s.min(cap),
            WindowPolicy::All => cap,
        }
    }

    pub fn contains(self, (i, j): Edge) -> bool {
        match self {
            WindowPolicy::Span(s) => i < j && j - i <= s,
            WindowPolicy::All => i < j,
        }
    }
}

impl fmt::Display for WindowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowPolicy::Span(s) => write!(f, "{s}"),
            WindowPolicy::All => f.write_str("all"),
        }
    }
}

impl FromStr for WindowPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix('W').or_else(|| s.strip_prefix('w')).unwrap_or(s);
        if s.eq_ignore_ascii_case("all") {
            return Ok(WindowPolicy::All);
        }
        let span = s
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("unknown window '{s}'")))?;
        WindowPolicy::span(span)
    }
}

impl TryFrom<String> for WindowPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WindowPolicy> for String {
    fn from(w: WindowPolicy) -> String {
        w.to_string()
    }
}

/// Directed graph over sentence indices with forward-only edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowGraph {
    n: usize,
    edges: BTreeSet<Edge>,
    structure: Option<Structure>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl FlowGraph {
    /// Graph over `n` nodes with arbitrary forward edges, e.g. gold or
    /// predicted flows.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        for &(i, j) in &edges {
            if i >= j {
                return Err(Error::validation(format!("backward edge ({i}, {j})")));
            }
            if j >= n {
                return Err(Error::validation(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
        }
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for &(i, j) in &edges {
            outgoing[i].push(j);
            incoming[j].push(i);
        }
        Ok(FlowGraph {
            n,
            edges,
            structure: None,
            incoming,
            outgoing,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn structure(&self) -> Option<Structure> {
        self.structure
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.incoming[v]
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.outgoing[v]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.incoming[v].len()
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.outgoing[v].len()
    }

    /// In-degree plus out-degree.
    pub fn degree(&self, v: usize) -> usize {
        self.in_degree(v) + self.out_degree(v)
    }
}

/// Builds the graph a GNN aggregates over while learning.
pub fn build_structure(n: usize, structure: Structure, window: WindowPolicy) -> Result<FlowGraph> {
    if n == 0 {
        return Err(Error::Empty("document graph"));
    }
    let mut graph = match structure {
        Structure::Linear => FlowGraph::from_edges(n, (1..n).map(|j| (j - 1, j)))?,
        Structure::SemiComplete => FlowGraph::from_edges(n, window_pairs(n, window))?,
    };
    graph.structure = Some(structure);
    Ok(graph)
}

/// All `(i, j)` with `0 < j - i <= span`, lexicographic.
pub fn window_pairs(n: usize, window: WindowPolicy) -> Vec<Edge> {
    let s = window.effective_span(n);
    let mut pairs = Vec::with_capacity(comparison_count(n, window));
    for i in 0..n {
        for j in i + 1..=(i + s).min(n.saturating_sub(1)) {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Closed-form size of [`window_pairs`]:
/// `max(n - s, 0)·s + s(s - 1)/2` with `s` capped at `n - 1`, and `C(n, 2)`
/// for the unbounded window.
pub fn comparison_count(n: usize, window: WindowPolicy) -> usize {
    match window {
        WindowPolicy::All => n * n.saturating_sub(1) / 2,
        WindowPolicy::Span(_) => {
            let s = window.effective_span(n);
            n.saturating_sub(s) * s + s * s.saturating_sub(1) / 2
        }
    }
}

/// Sentence pairs to classify, with gold labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub pairs: Vec<Edge>,
    pub labels: Vec<bool>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// In-window pairs plus every out-of-window gold edge, labelled against the
/// document's gold edges.
pub fn enumerate_candidates(doc: &Document, window: WindowPolicy) -> Result<CandidateSet> {
    let n = doc.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "document '{}' has {n} sentences; need at least 2",
            doc.id()
        )));
    }
    let mut pairs: BTreeSet<Edge> = window_pairs(n, window).into_iter().collect();
    pairs.extend(doc.gold_edges().iter().copied());
    let pairs: Vec<Edge> = pairs.into_iter().collect();
    let labels = pairs.iter().map(|e| doc.gold_edges().contains(e)).collect();
    Ok(CandidateSet { pairs, labels })
}

/// Fraction of candidates that are gold edges.
pub fn edge_ratio(candidates: &CandidateSet) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    Ok(candidates.positives() as f64 / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SentenceRecord, SentenceType};
    use proptest::prelude::*;

    fn doc(n: usize, edges: &[Edge]) -> Document {
        let sentences = (0..n)
            .map(|i| SentenceRecord::new(i, format!("s{i}"), SentenceType::Action))
            .collect();
        Document::new("d", sentences, edges.iter().copied()).unwrap()
    }

    fn brute_force(n: usize, s: Option<usize>) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i < j && s.map_or(true, |s| j - i <= s) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn edges(g: &FlowGraph) -> Vec<Edge> {
        g.edges().iter().copied().collect()
    }

    #[test]
    fn linear_structure() {
        let g = build_structure(4, Structure::Linear, WindowPolicy::All).unwrap();
        assert_eq!(edges(&g), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.structure(), Some(Structure::Linear));
    }

    #[test]
    fn semi_complete_structures() {
        let g = build_structure(3, Structure::SemiComplete, WindowPolicy::All).unwrap();
        assert_eq!(edges(&g), vec![(0, 1), (0, 2), (1, 2)]);
        let g = build_structure(5, Structure::SemiComplete, WindowPolicy::W3).unwrap();
        assert_eq!(
            edges(&g),
            vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
        );
    }

    #[test]
    fn empty_structure_is_an_error() {
        assert!(build_structure(0, Structure::Linear, WindowPolicy::All).is_err());
    }

    #[test]
    fn candidate_examples() {
        let c = enumerate_candidates(&doc(10, &[(0, 9)]), WindowPolicy::W5).unwrap();
        assert_eq!(c.len(), 36);
        assert_eq!(c.positives(), 1);
        assert_eq!(enumerate_candidates(&doc(6, &[]), WindowPolicy::All).unwrap().len(), 15);
        assert_eq!(enumerate_candidates(&doc(4, &[]), WindowPolicy::W3).unwrap().len(), 6);
        assert!(enumerate_candidates(&doc(1, &[]), WindowPolicy::All).is_err());
    }

    #[test]
    fn candidates_are_lexicographic_and_labelled() {
        let c = enumerate_candidates(&doc(5, &[(0, 4), (1, 2)]), WindowPolicy::Span(2)).unwrap();
        let mut sorted = c.pairs.clone();
        sorted.sort();
        assert_eq!(c.pairs, sorted);
        for (pair, label) in c.pairs.iter().zip(&c.labels) {
            assert_eq!(*label, *pair == (0, 4) || *pair == (1, 2));
        }
    }

    #[test]
    fn comparison_count_examples() {
        assert_eq!(comparison_count(6, WindowPolicy::W3), 12);
        assert_eq!(comparison_count(2, WindowPolicy::All), 1);
        assert_eq!(comparison_count(3, WindowPolicy::W5), 3);
        assert_eq!(comparison_count(10, WindowPolicy::W5), 35);
        assert_eq!(comparison_count(1, WindowPolicy::W3), 0);
    }

    #[test]
    fn edge_ratio_examples() {
        let c = CandidateSet {
            pairs: (0..10).map(|j| (0, j + 1)).collect(),
            labels: (0..10).map(|k| k < 2).collect(),
        };
        assert_eq!(edge_ratio(&c).unwrap(), 0.2);
        assert!(edge_ratio(&CandidateSet::default()).is_err());
    }

    #[test]
    fn window_parsing() {
        assert_eq!("3".parse::<WindowPolicy>().unwrap(), WindowPolicy::W3);
        assert_eq!("W5".parse::<WindowPolicy>().unwrap(), WindowPolicy::W5);
        assert_eq!("all".parse::<WindowPolicy>().unwrap(), WindowPolicy::All);
        assert!("0".parse::<WindowPolicy>().is_err());
        assert!("x".parse::<WindowPolicy>().is_err());
    }

    #[test]
    fn degrees() {
        let g = FlowGraph::from_edges(3, [(0, 1), (0, 2), (1, 2)]).unwrap();
        assert_eq!(g.in_neighbors(2), &[0, 1]);
        assert_eq!(g.degree(1), 2);
        assert!(FlowGraph::from_edges(3, [(1, 1)]).is_err());
        assert!(FlowGraph::from_edges(3, [(1, 3)]).is_err());
    }

    proptest! {
        #[test]
        fn count_matches_enumeration(n in 1usize..50, s in 1usize..8) {
            for w in [WindowPolicy::Span(s), WindowPolicy::All] {
                let expected = brute_force(n, match w { WindowPolicy::Span(s) => Some(s), _ => None });
                prop_assert_eq!(window_pairs(n, w), expected.clone());
                prop_assert_eq!(comparison_count(n, w), expected.len());
            }
        }

        #[test]
        fn windows_nest(n in 2usize..30, seed_edges in proptest::collection::vec((0usize..30, 1usize..30), 0..10)) {
            let gold: Vec<Edge> = seed_edges
                .into_iter()
                .map(|(i, d)| (i % n, i % n + d))
                .filter(|&(i, j)| i < j && j < n)
                .collect();
            let d = doc(n, &gold);
            let sets: Vec<BTreeSet<Edge>> = [WindowPolicy::W3, WindowPolicy::W4, WindowPolicy::W5, WindowPolicy::All]
                .iter()
                .map(|&w| enumerate_candidates(&d, w).unwrap().pairs.into_iter().collect())
                .collect();
            for pair in sets.windows(2) {
                prop_assert!(pair[0].is_subset(&pair[1]));
            }
            for w in [WindowPolicy::W3, WindowPolicy::All] {
                let c = enumerate_candidates(&d, w).unwrap();
                for e in &gold {
                    prop_assert!(c.pairs.contains(e));
                }
            }
        }

        #[test]
        fn span_one_semi_complete_is_linear(n in 1usize..40) {
            let sc = build_structure(n, Structure::SemiComplete, WindowPolicy::Span(1)).unwrap();
            let lin = build_structure(n, Structure::Linear, WindowPolicy::All).unwrap();
            prop_assert_eq!(sc.edges(), lin.edges());
            let all = build_structure(n, Structure::SemiComplete, WindowPolicy::All).unwrap();
            prop_assert_eq!(all.edges().len(), n * (n - 1) / 2);
        }

        #[test]
        fn linear_chain_ratio_is_two_over_n(n in 2usize..40) {
            let chain: Vec<Edge> = (1..n).map(|j| (j - 1, j)).collect();
            let c = enumerate_candidates(&doc(n, &chain), WindowPolicy::All).unwrap();
            prop_assert!((edge_ratio(&c).unwrap() - 2.0 / n as f64).abs() < 1e-12);
        }
    }
}
