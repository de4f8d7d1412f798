//! GNN with plain families → recurrent circuit over GraphTuples.

use std::collections::BTreeMap;

use crate::builder::CircuitBuilder;
use crate::circuit::GateId;
use crate::gadgets::{emit_mod_counter, emit_switch};
use crate::gnn::{GnnHalting, Member, RecCGnn};
use crate::graph::GraphShape;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

use super::report::{ArtifactMetrics, CircuitMetrics, CompileReport, GnnMetrics};
use super::CompileError;

/// Splices the layer-`idx` member for vertex `v` onto the label gates and
/// applies the layer activation.
pub(super) fn emit_layer_update(
    b: &mut CircuitBuilder,
    gnn: &RecCGnn,
    idx: usize,
    adj: &[Vec<usize>],
    v: usize,
    labels: &[GateId],
) -> Result<GateId, CompileError> {
    let spec = &gnn.layers[idx];
    let m = spec.family.member(adj[v].len() + 1)?;
    let Member::Plain(c) = &*m else {
        return Err(CompileError::Unsupported("outer compilation needs non-recurrent families".into()));
    };
    let mut ins = vec![labels[v]];
    ins.extend(adj[v].iter().map(|&u| labels[u]));
    let map = b.splice(c, &ins, &[]);
    let y = map[c.outputs()[0]];
    Ok(if spec.activation == "id" { y } else { b.act(&spec.activation, y) })
}

/// Halting spec mirroring the GNN halting over the `n` updated labels.
pub(super) fn mirror_halting(h: &GnnHalting, n: usize) -> Result<HaltingSpec, CompileError> {
    Ok(match h {
        GnnHalting::FixedLayer { k } => HaltingSpec::FixedIteration { k: *k as u64 },
        GnnHalting::ThresholdCount { target, bound } => HaltingSpec::ThresholdCount { target: *target, bound: *bound },
        GnnHalting::Family { family } => {
            // The GNN sorts labels before evaluating; a circuit cannot, so
            // only order-insensitive halting families are accepted.
            if !family.tags.tail_symmetric {
                return Err(CompileError::Unsupported("halting family must be tail-symmetric".into()));
            }
            match &*family.member(n + 1)? {
                Member::Plain(c) => HaltingSpec::Circuit { circuit: c.clone() },
                Member::Recurrent(_) => {
                    return Err(CompileError::Unsupported("halting family must be non-recurrent".into()))
                }
            }
        }
    })
}

/// Compiles `gnn` for graphs of the given shape.
///
/// Inputs and outputs are GraphTuples; the adjacency block is echoed. Every
/// iteration computes all `d` layer candidates per vertex and a mod-`d`
/// counter picks the active one, so iteration `i` reproduces GNN layer `i`.
pub fn compile_gnn_outer_to_circuit(
    gnn: &RecCGnn,
    shape: &GraphShape,
) -> Result<(RecurrentCircuit, CompileReport), CompileError> {
    gnn.validate()?;
    let n = shape.n;
    let d = gnn.period;
    let adj = shape.adjacency();
    let mut b = CircuitBuilder::new();
    let entries: Vec<GateId> = (0..n * n).map(|_| b.input()).collect();
    let labels: Vec<GateId> = (0..n).map(|_| b.input()).collect();

    let mut candidates: Vec<Vec<GateId>> = Vec::with_capacity(d);
    for idx in 0..d {
        let row = (0..n).map(|v| emit_layer_update(&mut b, gnn, idx, &adj, v, &labels)).collect::<Result<_, _>>()?;
        candidates.push(row);
    }
    let mut rec_edges: BTreeMap<GateId, GateId> = entries.iter().map(|&g| (g, g)).collect();
    let mut initial_aux = vec![];
    let new_labels = if d == 1 || n == 0 {
        candidates.swap_remove(0)
    } else {
        let (cur, next) = emit_mod_counter(&mut b, d);
        rec_edges.insert(cur, next);
        initial_aux.push(1.0);
        let branches: Vec<(f64, Vec<GateId>)> =
            candidates.into_iter().enumerate().map(|(l, row)| ((l + 1) as f64, row)).collect();
        emit_switch(&mut b, &branches, cur)?
    };
    for (&l, &nl) in labels.iter().zip(&new_labels) {
        rec_edges.insert(l, nl);
    }
    for &e in &entries {
        b.output(e);
    }
    for &nl in &new_labels {
        b.output(nl);
    }
    let rec = RecurrentCircuit {
        underlying: b.finish(),
        initial_aux,
        rec_edges,
        halting_gates: new_labels,
        halting: mirror_halting(&gnn.halting, n)?,
        counter: None,
    };
    let mut report = CompileReport::new(
        "gnn2circ",
        ArtifactMetrics::Gnn(GnnMetrics::of(gnn, shape)),
        ArtifactMetrics::Circuit(CircuitMetrics::of(&rec)),
    );
    report.gadget("member-copy", n * d);
    if d > 1 && n > 0 {
        report.gadget("mod-counter", 1);
        report.gadget("switch", 1);
    }
    Ok((rec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{run_gnn, ac_to_cgnn, CircuitFamily, FamilyGenerator, LayerSpec, RunOptions};
    use crate::graph::{encode_graph, LabelledGraph};

    fn triangle() -> LabelledGraph {
        LabelledGraph::new(3, [(0, 1), (1, 2), (0, 2)], vec![1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn triangle_sum() {
        let gnn = ac_to_cgnn(1.0, 1.0, 0.0, "id", 1, GnnHalting::FixedLayer { k: 1 });
        let (rec, report) = compile_gnn_outer_to_circuit(&gnn, &triangle().shape()).unwrap();
        let (out, trace) = rec.run(&encode_graph(&triangle()), 100).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 6.0, 6.0, 6.0]);
        assert_eq!(trace.iterations(), 1);
        assert!(rec.underlying.is_sign_free());
        assert_eq!(report.gadgets["member-copy"], 3);
    }

    #[test]
    fn identity_gnn_is_identity() {
        let gnn = RecCGnn::new(
            vec![LayerSpec { family: CircuitFamily::template(FamilyGenerator::Identity), activation: "id".into() }],
            GnnHalting::FixedLayer { k: 1 },
            10,
        );
        let g = triangle();
        let (rec, _) = compile_gnn_outer_to_circuit(&gnn, &g.shape()).unwrap();
        assert_eq!(rec.run(&encode_graph(&g), 10).unwrap().0, encode_graph(&g));
    }

    #[test]
    fn alternating_layers_follow_the_counter() {
        let sum = LayerSpec { family: CircuitFamily::template(FamilyGenerator::Sum), activation: "id".into() };
        let prod = LayerSpec { family: CircuitFamily::template(FamilyGenerator::Product), activation: "id".into() };
        let gnn = RecCGnn::new(vec![sum, prod.clone(), prod], GnnHalting::FixedLayer { k: 5 }, 10);
        let g = LabelledGraph::new(3, [(0, 1), (1, 2)], vec![1.0, -2.0, 0.5]).unwrap();
        let (rec, _) = compile_gnn_outer_to_circuit(&gnn, &g.shape()).unwrap();
        let expect = run_gnn(&gnn, &g, &RunOptions::default()).unwrap();
        let (out, trace) = rec.run(&encode_graph(&g), 100).unwrap();
        assert_eq!(out, encode_graph(&expect.graph));
        assert_eq!(trace.iterations(), 5);
        // the counter is the only aux gate and cycles 1, 2, 3, 1, 2
        let counters: Vec<f64> = trace.records.iter().map(|r| r.aux[0]).collect();
        assert_eq!(counters, vec![1.0, 2.0, 3.0, 1.0, 2.0]);
    }

    #[test]
    fn threshold_halting_matches() {
        let gnn = ac_to_cgnn(0.0, 1.0, 0.0, "id", 1, GnnHalting::ThresholdCount { target: 2.0, bound: 1 });
        let g = LabelledGraph::new(3, [(0, 1), (1, 2)], vec![1.0, 2.0, 1.0]).unwrap();
        let expect = run_gnn(&gnn, &g, &RunOptions::default()).unwrap();
        let (rec, _) = compile_gnn_outer_to_circuit(&gnn, &g.shape()).unwrap();
        let (out, trace) = rec.run(&encode_graph(&g), 100).unwrap();
        assert_eq!(out, encode_graph(&expect.graph));
        assert_eq!(trace.iterations(), expect.layers);
    }
}
