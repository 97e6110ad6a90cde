use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EdgeKind, Pdg};
use crate::ir::CodeUnit;

// Field order is alphabetical so serde writes sorted keys.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: usize,
    pub in_deg: usize,
    pub out_deg: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub dst: usize,
    pub kind: EdgeKind,
    pub src: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub edges: Vec<EdgeJson>,
    pub nodes: Vec<NodeJson>,
}

impl GraphJson {
    pub fn new(unit: &CodeUnit, g: &Pdg) -> GraphJson {
        let nodes = unit
            .instructions()
            .iter()
            .map(|instr| NodeJson {
                id: instr.index,
                in_deg: g.in_degree(instr.index),
                out_deg: g.out_degree(instr.index),
                text: instr.op.to_string(),
            })
            .collect();
        // Edges are kept sorted by (src, dst, kind).
        let edges = g
            .edges()
            .map(|e| EdgeJson {
                dst: e.dst,
                kind: e.kind,
                src: e.src,
            })
            .collect();
        GraphJson { edges, nodes }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json(unit: &CodeUnit, g: &Pdg) -> String {
    let mut s = serde_json::to_string_pretty(&GraphJson::new(unit, g)).expect("graph serializes");
    s.push('\n');
    s
}

pub fn to_dot(unit: &CodeUnit, g: &Pdg) -> String {
    let mut out = String::from("digraph pdg {\n  node [shape=box, fontname=\"monospace\"];\n");
    for instr in unit.instructions() {
        let text = instr.op.to_string().replace('\\', "\\\\").replace('"', "\\\"");
        writeln!(out, "  n{} [label=\"{}: {}\"];", instr.index, instr.index, text).unwrap();
    }
    for e in g.edges() {
        writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, e.kind).unwrap();
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;
    use crate::pdg::build_pdg;

    #[test]
    fn json_for_raw_chain() {
        let u = parse("a=a+1;b=a").unwrap();
        let json = to_json(&u, &build_pdg(&u));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["edges"].as_array().unwrap().len(), 1);
        assert_eq!(v["edges"][0]["kind"], "RAW");
        assert_eq!(v["nodes"][1]["text"], "b = a");
        assert_eq!(v["nodes"][1]["in_deg"], 1);
        let keys: Vec<_> = v["nodes"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["id", "in_deg", "out_deg", "text"]);
    }

    #[test]
    fn empty_graph() {
        let u = parse("").unwrap();
        assert_eq!(to_json(&u, &build_pdg(&u)), "{\n  \"edges\": [],\n  \"nodes\": []\n}\n");
    }

    #[test]
    fn dot_labels_edges_by_kind() {
        let u = parse("x=1;x=2").unwrap();
        let dot = to_dot(&u, &build_pdg(&u));
        assert!(dot.contains("n0 -> n1 [label=\"WAW\"];"));
        assert!(dot.starts_with("digraph pdg {"));
    }
}
