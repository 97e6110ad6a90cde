//! Program dependence graphs over instructions.
//!
//! Data edges follow read-after-write, write-after-read and write-after-write
//! conflicts on variables and the aliased memory cell. Control edges pin every
//! branch, label and `halt` in place: each control instruction depends on every
//! earlier instruction and every later instruction depends on it. Straight-line
//! runs between control instructions are the only regions where reordering
//! can happen, and all edges point forward in source order, so the edge
//! relation is always a partial order compatible with the original order.

mod distance;
mod emit;

pub use distance::{Distance, DistanceMatrix, TokenDistance};
pub use emit::{to_dot, to_json, GraphJson};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{CodeUnit, Location};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "RAW")]
    Raw,
    #[serde(rename = "WAR")]
    War,
    #[serde(rename = "WAW")]
    Waw,
    #[serde(rename = "CTRL")]
    Ctrl,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [EdgeKind::Raw, EdgeKind::War, EdgeKind::Waw, EdgeKind::Ctrl];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Raw => "RAW",
            EdgeKind::War => "WAR",
            EdgeKind::Waw => "WAW",
            EdgeKind::Ctrl => "CTRL",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PdgError {
    #[error("edge {src}->{dst} is a self-loop")]
    SelfLoop { src: usize, dst: usize },
    #[error("edge {src}->{dst} leaves the node range 0..{n}")]
    OutOfRange { src: usize, dst: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdg {
    n: usize,
    edges: BTreeSet<Edge>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl Pdg {
    /// Graph from explicit typed edges; used for hand-built graphs.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, EdgeKind)>,
    ) -> Result<Pdg, PdgError> {
        let mut set = BTreeSet::new();
        for (src, dst, kind) in edges {
            if src >= n || dst >= n {
                return Err(PdgError::OutOfRange { src, dst, n });
            }
            if src == dst {
                return Err(PdgError::SelfLoop { src, dst });
            }
            set.insert(Edge { src, dst, kind });
        }
        Ok(Pdg::with_edge_set(n, set))
    }

    fn with_edge_set(n: usize, edges: BTreeSet<Edge>) -> Pdg {
        let mut succ = vec![BTreeSet::new(); n];
        let mut pred = vec![BTreeSet::new(); n];
        for e in &edges {
            succ[e.src].insert(e.dst);
            pred[e.dst].insert(e.src);
        }
        let flat = |v: Vec<BTreeSet<usize>>| v.into_iter().map(|s| s.into_iter().collect()).collect();
        Pdg {
            n,
            edges,
            succ: flat(succ),
            pred: flat(pred),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, src: usize, dst: usize, kind: EdgeKind) -> bool {
        self.edges.contains(&Edge { src, dst, kind })
    }

    /// Distinct successors regardless of edge kind, ascending.
    pub fn successors(&self, node: usize) -> &[usize] {
        &self.succ[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.pred[node]
    }

    /// Incoming typed edges.
    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.dst == node).count()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.src == node).count()
    }

    /// Per-kind (in, out) edge counts for each node.
    pub fn kind_degrees(&self) -> Vec<([usize; 4], [usize; 4])> {
        let mut deg = vec![([0; 4], [0; 4]); self.n];
        for e in &self.edges {
            deg[e.dst].0[e.kind.slot()] += 1;
            deg[e.src].1[e.kind.slot()] += 1;
        }
        deg
    }

    /// The graph with node `i` renamed to `map[i]`.
    pub fn relabel(&self, map: &[usize]) -> Pdg {
        assert_eq!(map.len(), self.n, "relabel map has wrong length");
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                src: map[e.src],
                dst: map[e.dst],
                kind: e.kind,
            })
            .collect();
        Pdg::with_edge_set(self.n, edges)
    }
}

/// Builds the dependence graph of `unit`.
pub fn build_pdg(unit: &CodeUnit) -> Pdg {
    let ops: Vec<_> = unit.ops().collect();
    let n = ops.len();
    let reads: Vec<Vec<Location>> = ops.iter().map(|op| op.reads()).collect();
    let writes: Vec<Vec<Location>> = ops.iter().map(|op| op.writes()).collect();
    let mut edges = BTreeSet::new();
    let mut add = |src: usize, dst: usize, kind: EdgeKind| {
        if src != dst {
            edges.insert(Edge { src, dst, kind });
        }
    };

    for j in 0..n {
        for loc in &reads[j] {
            if let Some(i) = (0..j).rev().find(|&i| writes[i].contains(loc)) {
                add(i, j, EdgeKind::Raw);
            }
        }
        for loc in &writes[j] {
            for i in 0..j {
                if reads[i].contains(loc) {
                    add(i, j, EdgeKind::War);
                }
                if writes[i].contains(loc) {
                    add(i, j, EdgeKind::Waw);
                }
            }
        }
    }

    for (k, op) in ops.iter().enumerate() {
        if op.is_control() {
            for i in 0..k {
                add(i, k, EdgeKind::Ctrl);
            }
            for j in k + 1..n {
                add(k, j, EdgeKind::Ctrl);
            }
        }
    }

    Pdg::with_edge_set(n, edges)
}

/// Token-level model inputs: token ids, intra-instruction positions and the
/// owning node's degrees, one entry per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSequences {
    pub x_c: Vec<usize>,
    pub x_pos: Vec<usize>,
    pub x_ind: Vec<usize>,
    pub x_outd: Vec<usize>,
}

impl DegreeSequences {
    pub fn len(&self) -> usize {
        self.x_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_c.is_empty()
    }
}

pub fn degree_sequences(unit: &CodeUnit, graph: &Pdg) -> DegreeSequences {
    degree_sequences_with(unit, graph, &Vocab::standard())
}

pub fn degree_sequences_with(unit: &CodeUnit, graph: &Pdg, vocab: &Vocab) -> DegreeSequences {
    assert_eq!(unit.len(), graph.node_count(), "graph was not built from this unit");
    let in_deg: Vec<usize> = (0..graph.node_count()).map(|i| graph.in_degree(i)).collect();
    let out_deg: Vec<usize> = (0..graph.node_count()).map(|i| graph.out_degree(i)).collect();
    let owner = unit.token_owner();
    DegreeSequences {
        x_c: unit.tokens().iter().map(|t| vocab.id(t)).collect(),
        x_pos: unit.intra_pos().to_vec(),
        x_ind: owner.iter().map(|&i| in_deg[i]).collect(),
        x_outd: owner.iter().map(|&i| out_deg[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    fn edges_of(src: &str) -> Vec<(usize, usize, EdgeKind)> {
        build_pdg(&parse(src).unwrap())
            .edges()
            .map(|e| (e.src, e.dst, e.kind))
            .collect()
    }

    #[test]
    fn independent_constants_have_no_edges() {
        let g = build_pdg(&parse("x=2;y=4").unwrap());
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn read_after_write_chain() {
        let g = build_pdg(&parse("a=a+1;b=a").unwrap());
        assert_eq!(edges_of("a=a+1;b=a"), [(0, 1, EdgeKind::Raw)]);
        assert_eq!((g.in_degree(0), g.in_degree(1)), (0, 1));
        assert_eq!((g.out_degree(0), g.out_degree(1)), (1, 0));
    }

    #[test]
    fn write_after_write() {
        assert_eq!(edges_of("x=1;x=2"), [(0, 1, EdgeKind::Waw)]);
    }

    #[test]
    fn write_after_read() {
        assert_eq!(edges_of("y=x;x=1"), [(0, 1, EdgeKind::War)]);
    }

    #[test]
    fn raw_uses_nearest_writer() {
        let e = edges_of("x=1;x=2;y=x");
        assert!(e.contains(&(1, 2, EdgeKind::Raw)));
        assert!(!e.contains(&(0, 2, EdgeKind::Raw)));
        assert!(e.contains(&(0, 1, EdgeKind::Waw)));
    }

    #[test]
    fn memory_accesses_alias() {
        let e = edges_of("store a; b = load; store c");
        assert!(e.contains(&(0, 1, EdgeKind::Raw)));
        assert!(e.contains(&(0, 2, EdgeKind::Waw)));
        assert!(e.contains(&(1, 2, EdgeKind::War)));
    }

    #[test]
    fn control_instructions_are_barriers() {
        let g = build_pdg(&parse("z=3; if t goto L; x=1; L:; y=2").unwrap());
        for (src, dst) in [(0, 1), (1, 2), (1, 3), (1, 4), (0, 3), (2, 3), (3, 4)] {
            assert!(g.has_edge(src, dst, EdgeKind::Ctrl), "{src}->{dst}");
        }
        assert!(!g.has_edge(0, 2, EdgeKind::Ctrl));
    }

    #[test]
    fn edges_point_forward() {
        let g = build_pdg(&parse("L:; a = b; store a; b = load; if a goto L; c = a < b").unwrap());
        assert!(g.edges().all(|e| e.src < e.dst));
    }

    #[test]
    fn degree_sequences_of_chain() {
        let u = parse("a=a+1;b=a").unwrap();
        let d = degree_sequences(&u, &build_pdg(&u));
        assert_eq!(d.x_ind, [0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(d.x_outd, [1, 1, 1, 1, 1, 0, 0, 0]);
        assert_eq!(d.x_pos, [1, 2, 3, 4, 5, 1, 2, 3]);
        assert_eq!(d.len(), u.tokens().len());
    }

    #[test]
    fn single_instruction_degrees_are_zero() {
        let u = parse("x = y * 3").unwrap();
        let d = degree_sequences(&u, &build_pdg(&u));
        assert!(d.x_ind.iter().chain(&d.x_outd).all(|&v| v == 0));
    }

    #[test]
    fn from_edges_validates() {
        assert!(matches!(
            Pdg::from_edges(2, [(0, 0, EdgeKind::Raw)]),
            Err(PdgError::SelfLoop { .. })
        ));
        assert!(matches!(
            Pdg::from_edges(2, [(0, 2, EdgeKind::Raw)]),
            Err(PdgError::OutOfRange { .. })
        ));
    }
}
