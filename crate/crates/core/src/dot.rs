//! Graphviz rendering of flow graphs.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::corpus::Document;
use crate::graph::Edge;

pub const LABEL_CHARS: usize = 40;

const AGREE: &str = "color=black";
const GOLD_ONLY: &str = "color=blue, style=dashed";
const PREDICTED_ONLY: &str = "color=red, style=dotted";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn label(text: &str) -> String {
    let mut chars = text.chars();
    let head: String = chars.by_ref().take(LABEL_CHARS).collect();
    if chars.next().is_some() {
        format!("{head}...")
    } else {
        head
    }
}

/// One node per sentence and one arc per edge. When both edge sets are
/// given, agreeing, gold-only and predicted-only arcs are styled apart.
pub fn to_dot(doc: &Document, gold: Option<&BTreeSet<Edge>>, predicted: Option<&BTreeSet<Edge>>) -> String {
    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", escape(doc.id())).unwrap();
    writeln!(out, "  node [shape=box];").unwrap();
    for s in doc.sentences() {
        writeln!(
            out,
            "  n{} [label=\"{}: {}\\n[{}]\"];",
            s.index,
            s.index,
            escape(&label(&s.text)),
            s.stype.label()
        )
        .unwrap();
    }
    let mut arcs: Vec<(Edge, Option<&str>)> = Vec::new();
    match (gold, predicted) {
        (Some(g), Some(p)) => {
            let all: BTreeSet<Edge> = g.union(p).copied().collect();
            for e in all {
                let style = match (g.contains(&e), p.contains(&e)) {
                    (true, true) => AGREE,
                    (true, false) => GOLD_ONLY,
                    _ => PREDICTED_ONLY,
                };
                arcs.push((e, Some(style)));
            }
        }
        (Some(one), None) | (None, Some(one)) => arcs.extend(one.iter().map(|&e| (e, None))),
        (None, None) => {}
    }
    for ((i, j), style) in arcs {
        match style {
            Some(s) => writeln!(out, "  n{i} -> n{j} [{s}];").unwrap(),
            None => writeln!(out, "  n{i} -> n{j};").unwrap(),
        }
    }
    out.push_str("}\n");
    out
}
