//! Greedy counterexample shrinking by gate and vertex deletion.

use crate::circuit::{ExtendedCircuit, Gate, GateId, GateKind};
use crate::graph::LabelledGraph;
use crate::recurrent::RecurrentCircuit;

/// Removes internal gate `g`, wiring its consumers to its first predecessor.
/// `None` when `g` is a memory or output gate, or the result is invalid.
pub fn remove_gate(rec: &RecurrentCircuit, g: GateId) -> Option<RecurrentCircuit> {
    let c = &rec.underlying;
    if matches!(c.kind(g), GateKind::Input(_) | GateKind::AuxMemory(_) | GateKind::Output(_)) {
        return None;
    }
    let r = c.preds(g).first().copied();
    let shift = |x: GateId| if x > g { x - 1 } else { x };
    let redirect = |x: GateId| -> Option<GateId> { if x == g { r.map(shift) } else { Some(shift(x)) } };
    let mut gates = Vec::with_capacity(c.size() - 1);
    for (id, gate) in c.gates().iter().enumerate() {
        if id == g {
            continue;
        }
        let mut preds = Vec::with_capacity(gate.preds.len());
        for &p in &gate.preds {
            let q = redirect(p)?;
            if !preds.contains(&q) {
                preds.push(q);
            }
        }
        gates.push(Gate { kind: gate.kind.clone(), preds });
    }
    let underlying = ExtendedCircuit::from_parts(
        gates,
        c.inputs().iter().map(|&x| shift(x)).collect(),
        c.aux_memory().iter().map(|&x| shift(x)).collect(),
        c.outputs().iter().map(|&x| shift(x)).collect(),
    );
    let rec_edges =
        rec.rec_edges.iter().map(|(&k, &v)| Some((shift(k), redirect(v)?))).collect::<Option<_>>()?;
    let halting_gates = rec.halting_gates.iter().map(|&h| redirect(h)).collect::<Option<_>>()?;
    let counter = match rec.counter {
        Some(k) => Some(redirect(k)?),
        None => None,
    };
    let out = RecurrentCircuit {
        underlying,
        initial_aux: rec.initial_aux.clone(),
        rec_edges,
        halting_gates,
        halting: rec.halting.clone(),
        counter,
    };
    out.validate().is_ok().then_some(out)
}

pub fn remove_vertex(g: &LabelledGraph, v: usize) -> Option<LabelledGraph> {
    if g.n <= 1 {
        return None;
    }
    let shift = |x: usize| if x > v { x - 1 } else { x };
    let edges: Vec<(usize, usize)> =
        g.edges.iter().filter(|&&(a, b)| a != v && b != v).map(|&(a, b)| (shift(a), shift(b))).collect();
    let labels = g.labels.iter().enumerate().filter(|&(u, _)| u != v).map(|(_, &l)| l).collect();
    LabelledGraph::new(g.n - 1, edges, labels).ok()
}

/// Repeatedly applies the first deletion that keeps `fails` true.
pub fn shrink<T: Clone>(
    mut item: T,
    candidates: impl Fn(&T) -> Vec<T>,
    fails: impl Fn(&T) -> bool,
) -> T {
    'outer: loop {
        for c in candidates(&item) {
            if fails(&c) {
                item = c;
                continue 'outer;
            }
        }
        return item;
    }
}

pub fn circuit_deletions(rec: &RecurrentCircuit) -> Vec<RecurrentCircuit> {
    (0..rec.underlying.size()).filter_map(|g| remove_gate(rec, g)).collect()
}

pub fn vertex_deletions(g: &LabelledGraph) -> Vec<LabelledGraph> {
    (0..g.n).filter_map(|v| remove_vertex(g, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::GateKind;
    use crate::harness::fixtures::fibonacci;

    #[test]
    fn shrinks_circuit_keeping_property() {
        // property: still contains a multiplication gate
        let mut b = crate::builder::CircuitBuilder::new();
        let x = b.input();
        let s = b.add(&[x]);
        let t = b.add(&[s]);
        let p = b.mul(&[t, x]);
        let u = b.add(&[p]);
        b.output(u);
        let rec = crate::gnn::one_shot(b.finish());
        let has_mul = |r: &RecurrentCircuit| r.underlying.gates().iter().any(|g| g.kind == GateKind::Mul);
        let small = shrink(rec.clone(), circuit_deletions, has_mul);
        assert!(has_mul(&small));
        assert!(small.validate().is_ok());
        assert_eq!(small.underlying.size(), 3);
    }

    #[test]
    fn memory_gates_stay() {
        let fib = fibonacci();
        for g in fib.underlying.inputs().iter().chain(fib.underlying.aux_memory()) {
            assert!(remove_gate(&fib, *g).is_none());
        }
    }

    #[test]
    fn shrinks_graph() {
        let g = LabelledGraph::new(4, [(0, 1), (1, 2), (2, 3)], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let small = shrink(g, vertex_deletions, |h| h.n >= 2);
        assert_eq!(small.n, 2);
        assert!(small.validate().is_ok());
    }
}
