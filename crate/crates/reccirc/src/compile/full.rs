//! GNN with inner and outer recurrence → recurrent circuit.

use crate::builder::CircuitBuilder;
use crate::circuit::GateId;
use crate::gadgets::{emit_chi, emit_mod_counter, emit_switch, halting_circuit_for};
use crate::gnn::RecCGnn;
use crate::graph::GraphShape;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

use super::blocks::{emit_block, AuxInit};
use super::outer::mirror_halting;
use super::report::{ArtifactMetrics, CircuitMetrics, CompileReport, GnnMetrics};
use super::CompileError;

/// All `d` layer blocks run side by side on the current labels. A counter
/// selects the active block; when it finishes, its outputs become the new
/// labels, the layer number `L` advances and the counter moves on. The GNN
/// halting function is checked only at those layer boundaries.
pub fn compile_gnn_full_to_circuit(
    gnn: &RecCGnn,
    shape: &GraphShape,
) -> Result<(RecurrentCircuit, CompileReport), CompileError> {
    gnn.validate()?;
    let n = shape.n;
    let d = gnn.period;
    let adj = shape.adjacency();
    let mut b = CircuitBuilder::new();
    let mut st = AuxInit::default();
    let entries: Vec<GateId> = (0..n * n).map(|_| b.input()).collect();
    let labels: Vec<GateId> = (0..n).map(|_| b.input()).collect();
    for &g in &entries {
        st.latch(g, g);
    }
    let (counter, counter_next) = emit_mod_counter(&mut b, d);
    st.set(counter, 1.0);
    let selectors: Vec<f64> = (1..=d).map(|l| l as f64).collect();

    let mut blocks = Vec::with_capacity(d);
    let mut finished = Vec::with_capacity(d);
    for (idx, spec) in gnn.layers.iter().enumerate() {
        let active = emit_chi(&mut b, counter, &selectors, (idx + 1) as f64)?;
        let block = emit_block(&mut b, &mut st, spec, &adj, &labels, Some(active))?;
        finished.push(b.mul(&[block.all_done, active]));
        blocks.push(((idx + 1) as f64, block.outputs));
    }
    let layer_done = b.add(&finished);
    let still = b.one_minus(layer_done);
    let new_labels = if n == 0 { vec![] } else { emit_switch(&mut b, &blocks, counter)? };
    for (&h, &nl) in labels.iter().zip(&new_labels) {
        let next = b.mux(nl, layer_done, h, still);
        st.latch(h, next);
    }
    let next_counter = b.mux(counter_next, layer_done, counter, still);
    st.latch(counter, next_counter);
    let layer = st.aux(&mut b, 1.0);
    let next_layer = b.add(&[layer, layer_done]);
    st.latch(layer, next_layer);

    for &e in &entries {
        b.output(e);
    }
    for &nl in &new_labels {
        b.output(nl);
    }

    // halting reads (i, layer_done, L, new labels…)
    let inner = halting_circuit_for(&mirror_halting(&gnn.halting, n)?, n);
    let mut h = CircuitBuilder::new();
    h.input();
    let ld = h.input();
    let l = h.input();
    let vals: Vec<GateId> = (0..n).map(|_| h.input()).collect();
    let mut hin = vec![l];
    hin.extend(&vals);
    let map = h.splice(&inner, &hin, &[]);
    let shifted = h.shift(map[inner.outputs()[0]], -0.5);
    let fire = h.sign(shifted);
    let both = h.mul(&[ld, fire]);
    h.output(both);

    let mut halting_gates = vec![layer_done, layer];
    halting_gates.extend(&new_labels);
    let underlying = b.finish();
    let rec = RecurrentCircuit {
        initial_aux: st.initial(&underlying),
        underlying,
        rec_edges: st.rec_edges,
        halting_gates,
        halting: HaltingSpec::Circuit { circuit: h.finish() },
        counter: None,
    };
    let mut report = CompileReport::new(
        "gnn2circ-full",
        ArtifactMetrics::Gnn(GnnMetrics::of(gnn, shape)),
        ArtifactMetrics::Circuit(CircuitMetrics::of(&rec)),
    );
    report.gadget("layer-block", d);
    report.gadget("freeze-latch", d * n);
    report.gadget("mod-counter", 1);
    report.gadget("switch", usize::from(n > 0));
    Ok((rec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::{compile_gnn_inner_to_circuit, compile_gnn_outer_to_circuit};
    use crate::gnn::{run_gnn, CircuitFamily, FamilyGenerator, GnnHalting, LayerSpec, RunOptions};
    use crate::graph::{encode_graph, LabelledGraph};

    fn layer(generator: FamilyGenerator) -> LayerSpec {
        LayerSpec { family: CircuitFamily::template(generator), activation: "id".into() }
    }

    #[test]
    fn mixed_layers_match_interpreter() {
        let gnn = RecCGnn::new(
            vec![layer(FamilyGenerator::InnerFibonacci { cap: 6, beta: 0.5 }), layer(FamilyGenerator::Sum)],
            GnnHalting::ThresholdCount { target: 1.0, bound: 1 },
            50,
        );
        let g = LabelledGraph::new(3, [(0, 1), (1, 2)], vec![3.0, 1.0, 4.0]).unwrap();
        let expect = run_gnn(&gnn, &g, &RunOptions::default());
        let (rec, _) = compile_gnn_full_to_circuit(&gnn, &g.shape()).unwrap();
        match expect {
            Ok(e) => assert_eq!(rec.run(&encode_graph(&g), 10_000).unwrap().0, encode_graph(&e.graph)),
            Err(_) => assert!(rec.run(&encode_graph(&g), 2_000).is_err()),
        }
    }

    #[test]
    fn agrees_with_outer_when_members_are_plain() {
        let gnn = RecCGnn::new(
            vec![layer(FamilyGenerator::Sum), layer(FamilyGenerator::Product)],
            GnnHalting::FixedLayer { k: 3 },
            10,
        );
        let g = LabelledGraph::new(3, [(0, 1), (0, 2)], vec![1.0, 2.0, -1.0]).unwrap();
        let (full, _) = compile_gnn_full_to_circuit(&gnn, &g.shape()).unwrap();
        let (outer, _) = compile_gnn_outer_to_circuit(&gnn, &g.shape()).unwrap();
        let a = full.run(&encode_graph(&g), 100).unwrap();
        let b = outer.run(&encode_graph(&g), 100).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.iterations(), 3);
    }

    #[test]
    fn agrees_with_inner_on_fixed_layers() {
        let gnn = RecCGnn::new(
            vec![layer(FamilyGenerator::InnerFibonacci { cap: 5, beta: 1.0 })],
            GnnHalting::FixedLayer { k: 2 },
            50,
        );
        let g = LabelledGraph::new(2, [(0, 1)], vec![3.0, 2.0]).unwrap();
        let (full, _) = compile_gnn_full_to_circuit(&gnn, &g.shape()).unwrap();
        let (inner, _) = compile_gnn_inner_to_circuit(&gnn, &g.shape()).unwrap();
        let a = full.run(&encode_graph(&g), 1000).unwrap();
        let b = inner.run(&encode_graph(&g), 1000).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.0, encode_graph(&run_gnn(&gnn, &g, &RunOptions::default()).unwrap().graph));
    }
}
