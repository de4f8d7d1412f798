//! GNN with recurrent families and a fixed layer count → recurrent circuit.

use crate::builder::CircuitBuilder;
use crate::circuit::GateId;
use crate::gadgets::compose_recurrent;
use crate::gnn::{GnnHalting, LayerSpec, RecCGnn};
use crate::graph::GraphShape;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

use super::blocks::{emit_block, AuxInit};
use super::report::{ArtifactMetrics, CircuitMetrics, CompileReport, GnnMetrics};
use super::CompileError;

/// One GNN layer as a recurrent circuit on GraphTuples. It halts once every
/// vertex's member has halted; its single halting gate is the product of the
/// per-vertex done flags, read through `sign`.
pub fn layer_block(spec: &LayerSpec, shape: &GraphShape) -> Result<RecurrentCircuit, CompileError> {
    let n = shape.n;
    let adj = shape.adjacency();
    let mut b = CircuitBuilder::new();
    let mut st = AuxInit::default();
    let entries: Vec<GateId> = (0..n * n).map(|_| b.input()).collect();
    let labels: Vec<GateId> = (0..n).map(|_| b.input()).collect();
    for &g in entries.iter().chain(&labels) {
        st.latch(g, g);
    }
    let block = emit_block(&mut b, &mut st, spec, &adj, &labels, None)?;
    for &e in &entries {
        b.output(e);
    }
    for &o in &block.outputs {
        b.output(o);
    }
    let mut h = CircuitBuilder::new();
    h.input();
    let x = h.input();
    let s = h.sign(x);
    h.output(s);
    let underlying = b.finish();
    Ok(RecurrentCircuit {
        initial_aux: st.initial(&underlying),
        underlying,
        rec_edges: st.rec_edges,
        halting_gates: vec![block.all_done],
        halting: HaltingSpec::Circuit { circuit: h.finish() },
        counter: None,
    })
}

/// Chains one layer block per GNN layer up to the fixed halting layer.
pub fn compile_gnn_inner_to_circuit(
    gnn: &RecCGnn,
    shape: &GraphShape,
) -> Result<(RecurrentCircuit, CompileReport), CompileError> {
    gnn.validate()?;
    let GnnHalting::FixedLayer { k } = gnn.halting else {
        return Err(CompileError::Unsupported("inner compilation needs fixed-layer halting".into()));
    };
    if k == 0 {
        return Err(CompileError::Unsupported("fixed-layer halting at layer 0 never fires".into()));
    }
    let mut rec = layer_block(gnn.layer(1), shape)?;
    for i in 2..=k {
        rec = compose_recurrent(&rec, &layer_block(gnn.layer(i), shape)?)?;
    }
    let mut report = CompileReport::new(
        "gnn2circ-inner",
        ArtifactMetrics::Gnn(GnnMetrics::of(gnn, shape)),
        ArtifactMetrics::Circuit(CircuitMetrics::of(&rec)),
    );
    report.gadget("layer-block", k);
    report.gadget("freeze-latch", k * shape.n);
    report.gadget("compose", k - 1);
    Ok((rec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{run_gnn, CircuitFamily, FamilyGenerator, RunOptions};
    use crate::graph::{encode_graph, LabelledGraph};

    fn fib_gnn(k: usize, beta: f64) -> RecCGnn {
        let family = CircuitFamily::template(FamilyGenerator::InnerFibonacci { cap: 16, beta });
        RecCGnn::new(vec![LayerSpec { family, activation: "id".into() }], GnnHalting::FixedLayer { k }, 100)
    }

    #[test]
    fn isolated_fibonacci_vertices() {
        let g = LabelledGraph::new(3, [], vec![4.0, 5.0, 6.0]).unwrap();
        let (rec, _) = compile_gnn_inner_to_circuit(&fib_gnn(1, 0.0), &g.shape()).unwrap();
        let (out, trace) = rec.run(&encode_graph(&g), 100).unwrap();
        assert_eq!(&out[9..], &[3.0, 5.0, 8.0]);
        assert_eq!(trace.iterations(), 5);
        let gnn = run_gnn(&fib_gnn(1, 0.0), &g, &RunOptions::default()).unwrap();
        assert_eq!(gnn.graph.labels, vec![3.0, 5.0, 8.0]);
    }

    #[test]
    fn early_halter_stays_frozen() {
        let g = LabelledGraph::new(2, [], vec![2.0, 5.0]).unwrap();
        let block = layer_block(fib_gnn(1, 0.0).layer(1), &g.shape()).unwrap();
        let (_, trace) = block.run(&encode_graph(&g), 100).unwrap();
        assert_eq!(trace.iterations(), 4);
        let first: Vec<f64> = trace.records.iter().map(|r| r.outputs[4]).collect();
        assert_eq!(first, vec![1.0; 4]);
    }

    #[test]
    fn plain_members_halt_at_once() {
        let family = CircuitFamily::template(FamilyGenerator::Sum);
        let gnn = RecCGnn::new(vec![LayerSpec { family, activation: "id".into() }], GnnHalting::FixedLayer { k: 1 }, 10);
        let g = LabelledGraph::new(3, [(0, 1), (1, 2), (0, 2)], vec![1.0, 2.0, 3.0]).unwrap();
        let (rec, _) = compile_gnn_inner_to_circuit(&gnn, &g.shape()).unwrap();
        let (out, trace) = rec.run(&encode_graph(&g), 10).unwrap();
        assert_eq!(&out[9..], &[6.0, 6.0, 6.0]);
        assert_eq!(trace.iterations(), 1);
    }

    #[test]
    fn two_layers_with_neighbours() {
        let g = LabelledGraph::new(3, [(0, 1), (1, 2)], vec![3.0, 4.0, 2.0]).unwrap();
        let gnn = fib_gnn(2, 0.5);
        let expect = run_gnn(&gnn, &g, &RunOptions::default()).unwrap();
        let (rec, _) = compile_gnn_inner_to_circuit(&gnn, &g.shape()).unwrap();
        let (out, _) = rec.run(&encode_graph(&g), 1000).unwrap();
        assert_eq!(out, encode_graph(&expect.graph));
    }

    #[test]
    fn rejects_other_halting() {
        let mut gnn = fib_gnn(1, 0.0);
        gnn.halting = GnnHalting::ThresholdCount { target: 1.0, bound: 0 };
        assert!(matches!(
            compile_gnn_inner_to_circuit(&gnn, &GraphShape::new(1, []).unwrap()),
            Err(CompileError::Unsupported(_))
        ));
    }
}
