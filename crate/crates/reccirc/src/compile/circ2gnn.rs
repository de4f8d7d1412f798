//! Recurrent circuit → outer-recurrent GNN over its degree-coded graph.
//!
//! Every vertex learns its role from its degree alone. One period of the
//! GNN simulates one circuit iteration:
//!
//! 1. layers `λ(1) … λ(D)` evaluate the underlying gates level by level
//!    (`λ` skips the extra reset layers of global activations);
//! 2. from `D′ + 1` on, the halting circuit runs level by level and its
//!    decision lands on the copy vertices in the last layer of the period;
//! 3. in parallel with the halting phase the memory handoff runs: LOAD copies
//!    halting gates and memory sources into the halting inputs and relays,
//!    CLEAR resets the evaluated gates, RELAY and ADOPT move the new memory
//!    values across the two relay vertices.
//!
//! Gates compute `Σ neighbours − q` where `q` counts neighbours that are not
//! predecessors; the schedule keeps all of those at 1 whenever it matters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::circuit::{GateId, GateKind};
use crate::encoding::{symbolic_encode_circuit, HaltCopies, SymbolicLabelledGraph, VertexRole};
use crate::gadgets::make_iteration_free;
use crate::gnn::{CircuitFamily, DegreeDispatch, FamilyGenerator, GnnHalting, LayerSpec, RecCGnn, VertexOp};
use crate::recurrent::RecurrentCircuit;

use super::report::{encoding_shape, ArtifactMetrics, CircuitMetrics, CompileReport, GnnMetrics};
use super::CompileError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationMode {
    /// Activation gates apply their function inside the vertex update.
    #[default]
    Embedded,
    /// Activation gates compute a bare sum; the layer applies the function
    /// to every vertex and the next layer restores all other vertices.
    Global,
}

/// Layer numbers (1-based, within one period) of the simulation phases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ActivationMode,
    /// Depth of the encoded underlying circuit.
    pub depth: usize,
    /// Depths whose gates are activations applied globally.
    pub activation_levels: Vec<usize>,
    /// Layers spent on the underlying circuit, reset layers included.
    pub underlying_layers: usize,
    pub halting_depth: usize,
    pub load: usize,
    pub clear: usize,
    pub relay: usize,
    pub adopt: usize,
    pub period: usize,
}

impl Schedule {
    /// Layer evaluating underlying gates of depth `t ≥ 1`.
    pub fn lambda(&self, t: usize) -> usize {
        t + self.activation_levels.iter().filter(|&&a| a < t).count()
    }

    /// Layer evaluating halting-circuit gates of depth `t ≥ 1`.
    pub fn halting_layer(&self, t: usize) -> usize {
        self.underlying_layers + 1 + t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterGnnArtifact {
    pub gnn: RecCGnn,
    pub graph: SymbolicLabelledGraph,
    /// The circuit actually encoded, with its iteration number folded in.
    pub circuit: RecurrentCircuit,
    pub schedule: Schedule,
    pub report: CompileReport,
}

impl OuterGnnArtifact {
    /// Vertices carrying the circuit outputs once the GNN halts.
    pub fn output_vertices(&self) -> Vec<usize> {
        self.graph.underlying.outputs().iter().map(|&o| self.graph.gate_vertex(o)).collect()
    }
}

fn activation_levels(sym: &SymbolicLabelledGraph, rec: &RecurrentCircuit) -> Result<Vec<usize>, CompileError> {
    let u = &sym.underlying;
    let d = u.gate_depths();
    let mut levels: BTreeMap<usize, String> = BTreeMap::new();
    for (g, gate) in u.gates().iter().enumerate() {
        if let GateKind::Activation(name) = &gate.kind {
            if let Some(prev) = levels.insert(d[g], name.clone()) {
                if prev != *name {
                    return Err(CompileError::NotPredecessorForm(format!("depth {} mixes activations", d[g])));
                }
            }
        }
    }
    if levels.is_empty() {
        return Ok(vec![]);
    }
    if !rec.is_predecessor_form() {
        return Err(CompileError::NotPredecessorForm("circuit is not in predecessor form".into()));
    }
    for (g, gate) in u.gates().iter().enumerate() {
        if levels.contains_key(&d[g]) && !matches!(gate.kind, GateKind::Activation(_)) {
            return Err(CompileError::NotPredecessorForm(format!("gate {g} shares an activation level")));
        }
    }
    let last = *levels.keys().last().expect("non-empty");
    if u.outputs().iter().any(|&o| d[o] <= last) {
        return Err(CompileError::NotPredecessorForm("an output is not deeper than the last activation".into()));
    }
    Ok(levels.into_keys().collect())
}

/// Per-layer operation tables, indexed by vertex.
struct Plan {
    ops: Vec<Vec<VertexOp>>,
}

impl Plan {
    fn set(&mut self, layer: usize, v: usize, op: VertexOp) {
        self.ops[layer - 1][v] = op;
    }
}

pub fn compile_circuit_to_outer_gnn(
    rec: &RecurrentCircuit,
    mode: ActivationMode,
) -> Result<OuterGnnArtifact, CompileError> {
    let report = rec.validate();
    if !report.is_ok() {
        return Err(CompileError::Unsupported(format!("invalid circuit: {:?}", report.violations)));
    }
    let rec = make_iteration_free(rec);
    let sym = symbolic_encode_circuit(&rec, HaltCopies::Safe)?;
    let levels = match mode {
        ActivationMode::Embedded => vec![],
        ActivationMode::Global => activation_levels(&sym, &rec)?,
    };
    let u = &sym.underlying;
    let h = &sym.halt;
    let ud = u.gate_depths();
    let hd = h.gate_depths();
    let depth = u.depth();
    let halting_depth = h.depth();
    let underlying_layers = depth + levels.len();
    let load = underlying_layers + 1;
    let schedule = Schedule {
        mode,
        depth,
        activation_levels: levels.clone(),
        underlying_layers,
        halting_depth,
        load,
        clear: load + 1,
        relay: load + 2,
        adopt: load + 3,
        period: load + halting_depth,
    };
    debug_assert!(schedule.adopt <= schedule.period);

    let core = sym.core;
    let period = schedule.period;
    let mut plan = Plan { ops: vec![vec![VertexOp::Hold; core]; period] };
    let deg = |v: usize| (v + 1) * sym.r_prime;
    let sum_minus = |v: usize| VertexOp::SumMinus { q: sym.q[v] as f64 };
    let pass = |v: usize| VertexOp::SumMinus { q: (deg(v) - 1) as f64 };
    let one = VertexOp::Reset { value: 1.0 };
    let relayed: BTreeSet<GateId> = sym.relays.iter().map(|r| r.0).collect();

    for (g, gate) in u.gates().iter().enumerate() {
        let v = sym.gate_vertex(g);
        match &gate.kind {
            GateKind::Input(_) | GateKind::AuxMemory(_) => {
                if relayed.contains(&g) {
                    plan.set(schedule.clear, v, one.clone());
                    plan.set(schedule.adopt, v, pass(v));
                }
            }
            GateKind::Constant(_) => {}
            GateKind::Output(_) => {
                plan.set(1, v, one.clone());
                plan.set(schedule.lambda(ud[g]), v, sum_minus(v));
            }
            kind => {
                let op = match kind {
                    GateKind::Add => sum_minus(v),
                    GateKind::Mul => VertexOp::Prod,
                    GateKind::Activation(_) if mode == ActivationMode::Global => sum_minus(v),
                    GateKind::Activation(name) => VertexOp::Act { name: name.clone(), q: sym.q[v] as f64 },
                    _ => unreachable!(),
                };
                plan.set(schedule.lambda(ud[g]), v, op);
                plan.set(schedule.clear, v, one.clone());
            }
        }
    }
    for &(_, r1, r2) in &sym.relays {
        plan.set(schedule.load, r1, pass(r1));
        plan.set(schedule.relay, r1, one.clone());
        plan.set(schedule.relay, r2, pass(r2));
        plan.set(schedule.adopt, r2, one.clone());
    }
    for (hg, gate) in h.gates().iter().enumerate() {
        let v = sym.halt_vertex(hg);
        match &gate.kind {
            GateKind::Input(0) => {}
            GateKind::Input(_) => {
                plan.set(schedule.load, v, pass(v));
                plan.set(schedule.clear, v, one.clone());
            }
            GateKind::Constant(_) => {}
            kind => {
                plan.set(1, v, one.clone());
                let op = match kind {
                    GateKind::Add | GateKind::Output(_) => sum_minus(v),
                    GateKind::Mul => VertexOp::Prod,
                    GateKind::Activation(name) => VertexOp::Act { name: name.clone(), q: sym.q[v] as f64 },
                    _ => unreachable!(),
                };
                plan.set(schedule.halting_layer(hd[hg]), v, op);
            }
        }
    }

    let mut layers = Vec::with_capacity(period);
    for ops in plan.ops {
        let table: BTreeMap<usize, VertexOp> =
            ops.into_iter().enumerate().filter(|(_, op)| *op != VertexOp::Hold).map(|(v, op)| (deg(v), op)).collect();
        layers.push(LayerSpec {
            family: CircuitFamily::template(FamilyGenerator::DegreeDispatch(DegreeDispatch {
                ops: table,
                default: VertexOp::Hold,
            })),
            activation: "id".into(),
        });
    }
    // global activation layers, and the layer after each restoring all others
    for &t in &levels {
        let at = schedule.lambda(t);
        let name = u
            .gates()
            .iter()
            .enumerate()
            .find_map(|(g, gate)| match &gate.kind {
                GateKind::Activation(n) if ud[g] == t => Some(n.clone()),
                _ => None,
            })
            .expect("activation level has a gate");
        layers[at - 1].activation = name;
        let mut table = BTreeMap::from([(1, one.clone())]);
        for v in 0..core {
            let keep = matches!(sym.roles[v], VertexRole::Gate { gate } if ud[gate] == t);
            if keep {
                continue;
            }
            let value = match sym.roles[v] {
                VertexRole::Gate { gate } => constant_value(u.kind(gate)),
                VertexRole::Halt { gate } => constant_value(h.kind(gate)),
                _ => 1.0,
            };
            table.insert(deg(v), VertexOp::Reset { value });
        }
        layers[at].family = CircuitFamily::template(FamilyGenerator::DegreeDispatch(DegreeDispatch {
            ops: table,
            default: VertexOp::Hold,
        }));
    }

    let gnn = RecCGnn::new(
        layers,
        GnnHalting::ThresholdCount { target: 2.0, bound: sym.halting_bound },
        crate::recurrent::DEFAULT_BUDGET,
    );
    let shape = encoding_shape(&sym);
    let mut report = CompileReport::new(
        if mode == ActivationMode::Global { "circ2gnn-outer-global" } else { "circ2gnn-outer" },
        ArtifactMetrics::Circuit(CircuitMetrics::of(&rec)),
        ArtifactMetrics::Gnn(GnnMetrics::of(&gnn, &shape)),
    );
    report.gadget("relay-pair", sym.relays.len());
    report.gadget("halting-copy", sym.copies.len());
    report.gadget("dummy", sym.n - core);
    report.notes.push(format!("period {period}, halting bound {}", sym.halting_bound));
    Ok(OuterGnnArtifact { gnn, graph: sym, circuit: rec, schedule, report })
}

fn constant_value(kind: &GateKind) -> f64 {
    match kind {
        GateKind::Constant(c) => *c,
        _ => 1.0,
    }
}

/// The operation vertex `v` applies in layer `layer` of the period, read
/// back from the compiled degree tables.
pub fn applied_op(art: &OuterGnnArtifact, v: usize, layer: usize) -> VertexOp {
    let degree = match art.graph.roles[v] {
        VertexRole::Dummy { .. } => 1,
        _ => (v + 1) * art.graph.r_prime,
    };
    match &art.gnn.layer(layer).family.generator {
        FamilyGenerator::DegreeDispatch(dd) => dd.op(degree).clone(),
        _ => unreachable!("compiled layers dispatch on degree"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::CircuitBuilder;
    use crate::circuit::{approx_eq_slice, TOLERANCE};
    use crate::encoding::instantiate_encoding;
    use crate::gnn::{run_gnn, RunOptions};
    use crate::harness::fixtures;
    use crate::recurrent::HaltingSpec;

    fn check(rec: &RecurrentCircuit, mode: ActivationMode, x: &[f64]) -> OuterGnnArtifact {
        let art = compile_circuit_to_outer_gnn(rec, mode).unwrap();
        let (want, trace) = rec.run(x, 1000).unwrap();
        let g = instantiate_encoding(&art.graph, &art.circuit, x).unwrap();
        let run = run_gnn(&art.gnn, &g, &RunOptions { outer_budget: 100_000, ..Default::default() }).unwrap();
        let got: Vec<f64> = art.output_vertices().iter().map(|&v| run.graph.labels[v]).collect();
        assert!(approx_eq_slice(&got, &want, TOLERANCE), "x = {x:?}: {got:?} vs {want:?}");
        assert_eq!(run.layers, trace.iterations() * art.schedule.period);
        art
    }

    #[test]
    fn fibonacci_values() {
        let fib = fixtures::fibonacci();
        check(&fib, ActivationMode::Embedded, &[7.0]);
        let art = check(&fib, ActivationMode::Embedded, &[2.0]);
        art.graph.check_degree_scheme().unwrap();
        for x in 3..=6 {
            check(&fib, ActivationMode::Embedded, &[x as f64]);
        }
    }

    #[test]
    fn decrement_and_one_shots() {
        check(&fixtures::decrement(3), ActivationMode::Embedded, &[5.0]);
        check(&fixtures::times_two(), ActivationMode::Embedded, &[1.5]);
        check(&fixtures::plus_one(), ActivationMode::Embedded, &[-4.0]);
    }

    fn add_chain(depth: usize) -> RecurrentCircuit {
        let mut b = CircuitBuilder::new();
        let x = b.input();
        let mut g = x;
        for _ in 0..depth {
            g = b.shift(g, 1.0);
        }
        b.output(g);
        RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: BTreeMap::from([(x, g)]),
            halting_gates: vec![],
            halting: HaltingSpec::FixedIteration { k: 4 },
            counter: None,
        }
    }

    #[test]
    fn pure_add_period_is_constant() {
        let art = check(&add_chain(3), ActivationMode::Embedded, &[0.5]);
        let s = &art.schedule;
        assert_eq!(s.period, s.depth + 1 + s.halting_depth);
    }

    /// `x ↦ exp(x)·1` style circuit in predecessor form: input, exp, then a
    /// multiplication level feeding the recurrent edge and halting.
    fn exp_pred_form() -> RecurrentCircuit {
        let mut b = CircuitBuilder::new();
        let x = b.input();
        let k = b.aux();
        let e = b.act("exp", x);
        let e2 = b.act("exp", k);
        let m = b.mul(&[e, e2]);
        let dec = b.mul(&[e2]);
        let dec2 = b.add(&[dec]);
        let y = b.add(&[m]);
        b.output(y);
        let mut h = CircuitBuilder::new();
        h.input();
        let v = h.input();
        let lim = h.shift(v, -20.0);
        let s = h.sign(lim);
        h.output(s);
        RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![0.0],
            rec_edges: BTreeMap::from([(x, y), (k, dec2)]),
            halting_gates: vec![y],
            halting: HaltingSpec::Circuit { circuit: h.finish() },
            counter: None,
        }
    }

    #[test]
    fn global_activations() {
        let rec = exp_pred_form();
        assert!(rec.is_predecessor_form());
        let art = check(&rec, ActivationMode::Global, &[0.1]);
        assert_eq!(art.schedule.activation_levels, vec![1]);
        assert_eq!(art.gnn.layers[0].activation, "exp");
        check(&rec, ActivationMode::Embedded, &[0.1]);
    }

    #[test]
    fn global_rejects_non_predecessor_form() {
        let mut b = CircuitBuilder::new();
        let x = b.input();
        let e = b.act("exp", x);
        b.output(e);
        let rec = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: BTreeMap::from([(x, x)]),
            halting_gates: vec![],
            halting: HaltingSpec::AlwaysHalt,
            counter: None,
        };
        assert!(matches!(
            compile_circuit_to_outer_gnn(&rec, ActivationMode::Global),
            Err(CompileError::NotPredecessorForm(_))
        ));
    }

    #[test]
    fn dispatch_matches_roles() {
        let art = compile_circuit_to_outer_gnn(&fixtures::fibonacci(), ActivationMode::Embedded).unwrap();
        let u = &art.graph.underlying;
        let d = u.gate_depths();
        for (g, gate) in u.gates().iter().enumerate() {
            if matches!(gate.kind, GateKind::Mul) {
                assert_eq!(applied_op(&art, g, d[g]), VertexOp::Prod);
            }
        }
        for v in art.graph.core..art.graph.n {
            for layer in 1..=art.schedule.period {
                assert_eq!(applied_op(&art, v, layer), VertexOp::Hold);
            }
        }
    }
}
