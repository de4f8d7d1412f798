//! Graphviz DOT output.
//!
//! Circuit wires are solid, recurrent edges dashed, and halting gates get a
//! double outline.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::circuit::{real_to_string, ExtendedCircuit, GateKind};
use crate::graph::LabelledGraph;
use crate::recurrent::RecurrentCircuit;

fn gate_label(c: &ExtendedCircuit, g: usize) -> String {
    match c.kind(g) {
        GateKind::Input(i) => format!("x{}", i + 1),
        GateKind::AuxMemory(i) => format!("a{}", i + 1),
        GateKind::Constant(v) => real_to_string(*v),
        GateKind::Add => "+".into(),
        GateKind::Mul => "×".into(),
        GateKind::Activation(name) => name.clone(),
        GateKind::Output(i) => format!("y{}", i + 1),
    }
}

fn shape(kind: &GateKind) -> &'static str {
    match kind {
        GateKind::Input(_) | GateKind::AuxMemory(_) => "box",
        GateKind::Constant(_) => "plaintext",
        GateKind::Output(_) => "doublecircle",
        _ => "circle",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn write_gates(out: &mut String, c: &ExtendedCircuit, halting: &BTreeSet<usize>) {
    for g in 0..c.size() {
        let kind = c.kind(g);
        let shape = if matches!(kind, GateKind::Output(_)) && halting.contains(&g) { "circle" } else { shape(kind) };
        let _ = write!(out, "  g{g} [label=\"{}\", shape={shape}", escape(&gate_label(c, g)));
        if halting.contains(&g) {
            out.push_str(", peripheries=2");
        }
        out.push_str("];\n");
    }
    for g in 0..c.size() {
        for &p in c.preds(g) {
            let _ = writeln!(out, "  g{p} -> g{g};");
        }
    }
}

pub fn circuit_to_dot(c: &ExtendedCircuit) -> String {
    let mut out = String::from("digraph circuit {\n  rankdir=LR;\n");
    write_gates(&mut out, c, &BTreeSet::new());
    out.push_str("}\n");
    out
}

/// The underlying circuit with recurrent edges dashed and halting gates
/// outlined twice. The halting function is given in the graph label.
pub fn recurrent_to_dot(rec: &RecurrentCircuit) -> String {
    let halting: BTreeSet<usize> = rec.halting_gates.iter().copied().collect();
    let mut out = String::from("digraph recurrent {\n  rankdir=LR;\n");
    let what = match &rec.halting {
        crate::recurrent::HaltingSpec::Circuit { circuit } => format!("halting circuit, {} gates", circuit.size()),
        crate::recurrent::HaltingSpec::FixedIteration { k } => format!("halts at iteration {k}"),
        crate::recurrent::HaltingSpec::ThresholdCount { target, bound } => {
            format!("halts when more than {bound} values equal {}", real_to_string(*target))
        }
        crate::recurrent::HaltingSpec::AlwaysHalt => "halts after one iteration".into(),
    };
    let _ = writeln!(out, "  label=\"{}\";", escape(&what));
    write_gates(&mut out, &rec.underlying, &halting);
    for (&mem, &src) in &rec.rec_edges {
        let _ = writeln!(out, "  g{src} -> g{mem} [style=dashed, constraint=false];");
    }
    out.push_str("}\n");
    out
}

pub fn graph_to_dot(g: &LabelledGraph) -> String {
    let mut out = String::from("graph labelled {\n");
    for (v, l) in g.labels.iter().enumerate() {
        let _ = writeln!(out, "  v{v} [label=\"{v}: {}\"];", real_to_string(*l));
    }
    for &(a, b) in &g.edges {
        let _ = writeln!(out, "  v{a} -- v{b};");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixtures::fibonacci;

    #[test]
    fn fibonacci_dot() {
        let fib = fibonacci();
        let dot = recurrent_to_dot(&fib);
        let nodes = dot.lines().filter(|l| l.trim_start().starts_with('g') && l.contains("[label=")).count();
        assert_eq!(nodes, 5);
        assert_eq!(dot.matches("style=dashed").count(), fib.rec_edges.len());
        assert_eq!(dot.matches("peripheries=2").count(), fib.halting_gates.len());
        assert!(dot.starts_with("digraph"));
    }

    #[test]
    fn graph_dot() {
        let g = LabelledGraph::new(3, [(0, 1), (1, 2)], vec![1.0, 2.5, -1.0]).unwrap();
        let dot = graph_to_dot(&g);
        assert_eq!(dot.matches(" -- ").count(), 2);
        assert!(dot.contains("2.5"));
    }
}
