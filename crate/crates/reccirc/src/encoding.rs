//! Encoding a recurrent circuit as a labelled graph in which every gate
//! vertex is identified by its degree.
//!
//! Each non-dummy vertex with global index `i` (1-based) is padded with
//! degree-one dummy vertices until its degree is `i·r′`. The halting circuit
//! is embedded in the same graph, extended by a `×2` stage whose value is
//! fanned out to many copy vertices; the graph halts once enough vertices
//! carry the value 2.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::CircuitBuilder;
use crate::circuit::{ExtendedCircuit, Gate, GateId, GateKind};
use crate::graph::LabelledGraph;
use crate::recurrent::RecurrentCircuit;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EncodeError {
    #[error("invalid recurrent circuit: {0}")]
    Invalid(String),
    #[error("halting function must be circuit-backed")]
    NotCircuitBacked,
    #[error("halting circuit reads the iteration number; fold the counter first")]
    NotFolded,
    #[error("expected {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("symbolic graph and circuit disagree: {0}")]
    Mismatch(String),
    #[error("encoding needs {vertices} vertices, over the limit of {limit}")]
    TooLarge { vertices: usize, limit: usize },
}

/// Symbolic vertex label: a memory slot, a constant slot, or a literal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum SymLabel {
    In(usize),
    Aux(usize),
    Const(usize),
    Lit(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "kebab-case")]
pub enum VertexRole {
    /// Gate of the (normalized) underlying circuit.
    Gate { gate: GateId },
    /// Relay carrying a recurrent edge into `memory`; stage 1 sits next to
    /// the source, stage 2 next to the memory gate.
    Relay { memory: GateId, stage: u8 },
    /// Gate of the extended halting circuit.
    Halt { gate: GateId },
    Dummy { owner: usize },
}

/// How many vertices copy the halting decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltCopies {
    /// `n + m + ℓ + 1` copies fed directly, halting when more than
    /// `n + m + ℓ` vertices carry 2. Other vertices carrying 2 can trigger
    /// it early.
    Minimal,
    /// More copies than there are other vertices able to carry 2, fed
    /// through a fan-out tree, so only the copies can trigger it.
    #[default]
    Safe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicLabelledGraph {
    pub symbolic: bool,
    pub n: usize,
    #[serde(with = "crate::graph::edge_list")]
    pub edges: BTreeSet<(usize, usize)>,
    pub labels: Vec<SymLabel>,
    pub constant_values: Vec<f64>,
    pub roles: Vec<VertexRole>,
    /// Neighbours of each vertex that are not its predecessors.
    pub q: Vec<usize>,
    pub r_prime: usize,
    /// Vertices `0..core` are non-dummy.
    pub core: usize,
    pub copies: Vec<usize>,
    pub halting_bound: usize,
    /// The encoded circuit; output predecessors are padded to depth ≥ 2.
    pub underlying: ExtendedCircuit,
    /// The halting circuit extended with the `×2` stage and the copies.
    pub halt: ExtendedCircuit,
    /// `(memory gate, stage-1 vertex, stage-2 vertex)`.
    pub relays: Vec<(GateId, usize, usize)>,
    /// Underlying gate read by halting input `j + 1`.
    pub halting_gates: Vec<GateId>,
    pub halt_offset: usize,
}

impl SymbolicLabelledGraph {
    pub fn gate_vertex(&self, g: GateId) -> usize {
        g
    }

    pub fn halt_vertex(&self, h: GateId) -> usize {
        self.halt_offset + h
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    /// Scans the degree scheme: dummies have degree 1, the non-dummy vertex
    /// with index `i` has degree `i·r′`, and every circuit wire is an edge.
    pub fn check_degree_scheme(&self) -> Result<(), String> {
        let d = self.degrees();
        let mut seen = BTreeSet::new();
        for v in 0..self.n {
            match self.roles[v] {
                VertexRole::Dummy { .. } => {
                    if d[v] != 1 {
                        return Err(format!("dummy {v} has degree {}", d[v]));
                    }
                }
                _ => {
                    if d[v] != (v + 1) * self.r_prime {
                        return Err(format!("vertex {v} has degree {}, expected {}", d[v], (v + 1) * self.r_prime));
                    }
                    if d[v] < 2 || !seen.insert(d[v]) {
                        return Err(format!("degree {} of vertex {v} is not unique", d[v]));
                    }
                }
            }
        }
        for (g, gate) in self.underlying.gates().iter().enumerate() {
            for &p in &gate.preds {
                if !self.edges.contains(&(p.min(g), p.max(g))) {
                    return Err(format!("wire {p} -> {g} missing"));
                }
            }
        }
        for (h, gate) in self.halt.gates().iter().enumerate() {
            for &p in &gate.preds {
                let (a, b) = (self.halt_vertex(p), self.halt_vertex(h));
                if !self.edges.contains(&(a.min(b), a.max(b))) {
                    return Err(format!("halting wire {p} -> {h} missing"));
                }
            }
        }
        Ok(())
    }
}

/// Routes every output whose predecessor sits at depth < 2 through unary
/// `Add` pads. Existing gate ids are kept.
pub fn normalize_outputs(c: &ExtendedCircuit) -> ExtendedCircuit {
    let d = c.gate_depths();
    let mut gates = c.gates().to_vec();
    for &o in c.outputs() {
        let mut p = gates[o].preds[0];
        for _ in d[p]..2 {
            gates.push(Gate { kind: GateKind::Add, preds: vec![p] });
            p = gates.len() - 1;
        }
        gates[o].preds[0] = p;
    }
    ExtendedCircuit::from_parts(gates, c.inputs().to_vec(), c.aux_memory().to_vec(), c.outputs().to_vec())
}

/// Pads in a 4-ary fan-out tree with `k` leaves.
pub fn fanout_pads(k: usize) -> usize {
    tree_levels(k).iter().rev().skip(1).sum()
}

/// Level sizes from the first level below the root down to the leaves.
fn tree_levels(k: usize) -> Vec<usize> {
    let mut levels = vec![k];
    while *levels.last().unwrap() > 4 {
        let l = levels.last().unwrap().div_ceil(4);
        levels.push(l);
    }
    levels.reverse();
    levels
}

/// Smallest `k` with `k ≥ others + fanout_pads(k) + 1`.
pub fn safe_copy_count(others: usize) -> usize {
    let mut k = others + 1;
    loop {
        let next = others + fanout_pads(k) + 1;
        if next <= k {
            return k;
        }
        k = next;
    }
}

pub fn symbolic_encode_circuit(
    rec: &RecurrentCircuit,
    copies: HaltCopies,
) -> Result<SymbolicLabelledGraph, EncodeError> {
    symbolic_encode_circuit_bounded(rec, copies, usize::MAX)
}

/// As [`symbolic_encode_circuit`], but fails before allocating when the graph
/// would exceed `limit` vertices. The dummy count grows quadratically in the
/// circuit size.
pub fn symbolic_encode_circuit_bounded(
    rec: &RecurrentCircuit,
    copies: HaltCopies,
    limit: usize,
) -> Result<SymbolicLabelledGraph, EncodeError> {
    let report = rec.validate();
    if !report.is_ok() {
        return Err(EncodeError::Invalid(format!("{} violations", report.violations.len())));
    }
    let h = rec.halting.circuit().ok_or(EncodeError::NotCircuitBacked)?;
    if !rec.is_iteration_free() {
        return Err(EncodeError::NotFolded);
    }
    let u = normalize_outputs(&rec.underlying);

    let relays_src: Vec<(GateId, GateId)> =
        rec.memory_gates().map(|g| (g, rec.rec_edges[&g])).filter(|(g, s)| g != s).collect();
    let ucount = u.size();
    let halt_offset = ucount + 2 * relays_src.len();

    // halting circuit with the ×2 stage
    let mut b = CircuitBuilder::new();
    let ins: Vec<GateId> = (0..h.n()).map(|_| b.input()).collect();
    let hb = h.balance();
    let map = b.splice(&hb, &ins, &[]);
    let shifted = b.shift(map[hb.outputs()[0]], -0.5);
    let fired = b.sign(shifted);
    let two = b.scale(fired, 2.0);
    let others = halt_offset + b.len();
    let (k, bound) = match copies {
        HaltCopies::Minimal => {
            let ell = rec.ell() - usize::from(rec.counter.is_some());
            let base = rec.n() + rec.m() + ell;
            (base + 1, base)
        }
        HaltCopies::Safe => {
            let k = safe_copy_count(others);
            (k, k - 1)
        }
    };
    let mut copy_gates = Vec::with_capacity(k);
    match copies {
        HaltCopies::Minimal => {
            for _ in 0..k {
                copy_gates.push(b.output(two));
            }
        }
        HaltCopies::Safe => {
            let levels = tree_levels(k);
            let mut parents = vec![two];
            for (li, &size) in levels.iter().enumerate() {
                let leaf = li + 1 == levels.len();
                let mut cur = Vec::with_capacity(size);
                for c in 0..size {
                    let p = parents[c / 4];
                    cur.push(if leaf { b.output(p) } else { b.add(&[p]) });
                }
                parents = cur;
            }
            copy_gates = parents;
        }
    }
    let halt = b.finish();

    let core = halt_offset + halt.size();
    let mut roles: Vec<VertexRole> = (0..ucount).map(|g| VertexRole::Gate { gate: g }).collect();
    let mut edges = BTreeSet::new();
    let mut link = |a: usize, b: usize| {
        edges.insert((a.min(b), a.max(b)));
    };
    let mut npreds = vec![0usize; core];
    for (g, gate) in u.gates().iter().enumerate() {
        npreds[g] = gate.preds.len();
        for &p in &gate.preds {
            link(p, g);
        }
    }
    let mut relays = Vec::new();
    for (i, &(g, s)) in relays_src.iter().enumerate() {
        let r1 = ucount + 2 * i;
        let r2 = r1 + 1;
        roles.push(VertexRole::Relay { memory: g, stage: 1 });
        roles.push(VertexRole::Relay { memory: g, stage: 2 });
        link(s, r1);
        link(r1, r2);
        link(r2, g);
        relays.push((g, r1, r2));
    }
    for (hg, gate) in halt.gates().iter().enumerate() {
        roles.push(VertexRole::Halt { gate: hg });
        npreds[halt_offset + hg] = gate.preds.len();
        for &p in &gate.preds {
            link(halt_offset + p, halt_offset + hg);
        }
    }
    for (j, &g) in rec.halting_gates.iter().enumerate() {
        link(g, halt_offset + halt.inputs()[j + 1]);
    }

    let mut deg0 = vec![0usize; core];
    for &(a, b) in &edges {
        deg0[a] += 1;
        deg0[b] += 1;
    }
    let r_prime = deg0.iter().copied().max().unwrap_or(0).max(2);
    let vertices = (0..core).fold(core, |acc, v| acc.saturating_add(((v + 1) * r_prime).saturating_sub(deg0[v])));
    if vertices > limit {
        return Err(EncodeError::TooLarge { vertices, limit });
    }
    let mut n = core;
    for v in 0..core {
        let want = (v + 1) * r_prime;
        for _ in deg0[v]..want {
            edges.insert((v, n));
            roles.push(VertexRole::Dummy { owner: v });
            n += 1;
        }
    }

    let mut constant_values = Vec::new();
    let mut label_of = |kind: &GateKind| match kind {
        GateKind::Input(i) => SymLabel::In(*i),
        GateKind::AuxMemory(i) => SymLabel::Aux(*i),
        GateKind::Constant(c) => {
            constant_values.push(*c);
            SymLabel::Const(constant_values.len() - 1)
        }
        _ => SymLabel::Lit(1.0),
    };
    let mut labels: Vec<SymLabel> = u.gates().iter().map(|g| label_of(&g.kind)).collect();
    labels.extend(std::iter::repeat_n(SymLabel::Lit(1.0), 2 * relays.len()));
    for gate in halt.gates() {
        // the halting circuit's inputs are loaded at run time
        labels.push(match gate.kind {
            GateKind::Input(_) => SymLabel::Lit(1.0),
            ref k => label_of(k),
        });
    }
    labels.extend(std::iter::repeat_n(SymLabel::Lit(1.0), n - core));

    let q = (0..core).map(|v| (v + 1) * r_prime - npreds[v]).chain(std::iter::repeat_n(1, n - core)).collect();
    Ok(SymbolicLabelledGraph {
        symbolic: true,
        n,
        edges,
        labels,
        constant_values,
        roles,
        q,
        r_prime,
        core,
        copies: copy_gates.iter().map(|&c| halt_offset + c).collect(),
        halting_bound: bound,
        underlying: u,
        halt,
        relays,
        halting_gates: rec.halting_gates.clone(),
        halt_offset,
    })
}

/// Replaces symbolic labels by the input `x`, the initial aux values of
/// `rec`, and the recorded constants.
pub fn instantiate_encoding(
    sym: &SymbolicLabelledGraph,
    rec: &RecurrentCircuit,
    x: &[f64],
) -> Result<LabelledGraph, EncodeError> {
    if x.len() != rec.n() {
        return Err(EncodeError::Arity { expected: rec.n(), got: x.len() });
    }
    if sym.underlying.n() != rec.n() || sym.underlying.ell() != rec.ell() {
        return Err(EncodeError::Mismatch("memory arity".into()));
    }
    let labels = sym
        .labels
        .iter()
        .map(|l| match *l {
            SymLabel::In(i) => x[i],
            SymLabel::Aux(i) => rec.initial_aux[i],
            SymLabel::Const(i) => sym.constant_values[i],
            SymLabel::Lit(v) => v,
        })
        .collect();
    Ok(LabelledGraph { n: sym.n, edges: sym.edges.clone(), labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixtures;
    use crate::recurrent::fold_iteration_counter;

    fn folded_fib() -> RecurrentCircuit {
        fold_iteration_counter(&fixtures::fibonacci()).unwrap()
    }

    #[test]
    fn fibonacci_degree_scheme() {
        let sym = symbolic_encode_circuit(&folded_fib(), HaltCopies::Safe).unwrap();
        sym.check_degree_scheme().unwrap();
        let d = sym.degrees();
        assert!(sym.roles.iter().enumerate().all(|(v, r)| !matches!(r, VertexRole::Dummy { .. }) || d[v] == 1));
    }

    #[test]
    fn size_limit_counts_every_vertex() {
        let sym = symbolic_encode_circuit(&folded_fib(), HaltCopies::Safe).unwrap();
        let exact = symbolic_encode_circuit_bounded(&folded_fib(), HaltCopies::Safe, sym.n).unwrap();
        assert_eq!(exact, sym);
        match symbolic_encode_circuit_bounded(&folded_fib(), HaltCopies::Safe, sym.n - 1) {
            Err(EncodeError::TooLarge { vertices, .. }) => assert_eq!(vertices, sym.n),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fibonacci_minimal_copy_count() {
        let sym = symbolic_encode_circuit(&folded_fib(), HaltCopies::Minimal).unwrap();
        assert_eq!(sym.copies.len(), 5);
        assert_eq!(sym.halting_bound, 4);
        sym.check_degree_scheme().unwrap();
    }

    #[test]
    fn unfolded_rejected() {
        assert_eq!(
            symbolic_encode_circuit(&fixtures::fibonacci(), HaltCopies::Safe).unwrap_err(),
            EncodeError::NotFolded
        );
    }

    #[test]
    fn fibonacci_instantiation() {
        let rec = folded_fib();
        let sym = symbolic_encode_circuit(&rec, HaltCopies::Safe).unwrap();
        let g = instantiate_encoding(&sym, &rec, &[5.0]).unwrap();
        let u = &rec.underlying;
        assert_eq!(g.labels[u.inputs()[0]], 5.0);
        assert_eq!(g.labels[u.aux_memory()[0]], 1.0);
        assert_eq!(g.labels[u.aux_memory()[1]], 0.0);
        for (v, l) in sym.labels.iter().enumerate() {
            if matches!(l, SymLabel::Lit(_)) {
                assert_eq!(g.labels[v], 1.0);
            }
        }
        assert_eq!(g.edges, sym.edges);
        assert_eq!(g, instantiate_encoding(&sym, &rec, &[5.0]).unwrap());
    }

    #[test]
    fn safe_copies_exceed_other_vertices() {
        for others in [0, 1, 3, 10, 57, 200] {
            let k = safe_copy_count(others);
            assert!(k > others + fanout_pads(k), "{others} -> {k}");
        }
        assert_eq!(fanout_pads(4), 0);
        assert_eq!(fanout_pads(5), 2);
        assert_eq!(fanout_pads(17), 5 + 2);
    }

    #[test]
    fn outputs_padded() {
        let fib = fixtures::fibonacci();
        let u = normalize_outputs(&fib.underlying);
        let d = u.gate_depths();
        assert!(u.outputs().iter().all(|&o| d[u.preds(o)[0]] >= 2));
        assert_eq!(u.evaluate(&[3.0], &[2.0, 5.0]).unwrap().0, vec![7.0]);
    }
}
