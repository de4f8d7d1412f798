//! Symmetric recurrent circuit → single-layer inner-recurrent GNN on a
//! complete bipartite graph.
//!
//! Input-side vertices carry `x`, output-side vertex `j` carries `j`. Each
//! output-side vertex runs the circuit on its neighbours and forwards output
//! `j`; input-side vertices keep their label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::builder::CircuitBuilder;
use crate::circuit::GateId;
use crate::gadgets::{emit_chi, emit_eq_const, lower_builtin_halting};
use crate::gnn::{CircuitFamily, FamilyGenerator, FamilyTags, GnnHalting, LayerSpec, Member, RecCGnn};
use crate::graph::GraphShape;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

use super::report::{ArtifactMetrics, CircuitMetrics, CompileReport, GnnMetrics};
use super::CompileError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricArtifact {
    pub gnn: RecCGnn,
    pub n: usize,
    pub m: usize,
    pub shape: GraphShape,
    pub report: CompileReport,
}

impl SymmetricArtifact {
    /// With `n = m` both sides have the same degree; an input that is itself
    /// a permutation of `1..=m` then looks like an output side and the
    /// result is unspecified.
    pub fn is_ambiguous(&self, x: &[f64]) -> bool {
        if self.n != self.m {
            return false;
        }
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        s.iter().enumerate().all(|(i, &v)| v == (i + 1) as f64)
    }
}

/// The member run by output-side vertices: `(selector, x…) ↦ f(x)[selector]`.
///
/// With `detect_side` set it first checks, on the initial neighbour labels,
/// whether they are exactly `1..=n`; if so the vertex is on the input side,
/// keeps its own label and halts at once.
fn wrapper(rec: &RecurrentCircuit, detect_side: bool) -> Result<RecurrentCircuit, CompileError> {
    let rec = lower_builtin_halting(rec);
    let (n, m) = (rec.n(), rec.m());
    let u = &rec.underlying;
    let mut b = CircuitBuilder::new();
    let sel = b.input();
    let ys: Vec<GateId> = (0..n).map(|_| b.input()).collect();
    let aux: Vec<GateId> = (0..rec.ell()).map(|_| b.aux()).collect();
    let mut initial_aux = rec.initial_aux.clone();
    let map = b.splice(u, &ys, &aux);
    let mut rec_edges = BTreeMap::from([(sel, sel)]);
    for (own, mine) in rec.memory_gates().zip(ys.iter().chain(&aux)) {
        rec_edges.insert(*mine, map[rec.rec_edges[&own]]);
    }
    let selectors: Vec<f64> = (1..=m).map(|j| j as f64).collect();
    let terms: Vec<GateId> = u
        .outputs()
        .iter()
        .enumerate()
        .map(|(j, &o)| {
            let chi = emit_chi(&mut b, sel, &selectors, (j + 1) as f64)?;
            Ok(b.mul(&[map[o], chi]))
        })
        .collect::<Result<_, CompileError>>()?;
    let picked = b.add(&terms);
    let mut halting_gates: Vec<GateId> = rec.halting_gates.iter().map(|&g| map[g]).collect();
    let h = rec.halting.circuit().expect("lowered").clone();

    if !detect_side {
        b.output(picked);
        return Ok(RecurrentCircuit {
            underlying: b.finish(),
            initial_aux,
            rec_edges,
            halting_gates,
            halting: HaltingSpec::Circuit { circuit: h },
            counter: None,
        });
    }

    // power sums of the first-iteration neighbours against those of 1..=n
    let first = b.aux();
    let latched = b.aux();
    initial_aux.extend([1.0, 0.0]);
    let zero = b.constant(0.0);
    rec_edges.insert(first, zero);
    let mut checks = Vec::with_capacity(n);
    let mut powers = ys.clone();
    for k in 1..=n {
        if k > 1 {
            powers = powers.iter().zip(&ys).map(|(&p, &y)| b.mul(&[p, y])).collect();
        }
        let sum = b.add(&powers);
        let target: f64 = (1..=n).map(|j| (j as f64).powi(k as i32)).sum();
        checks.push(emit_eq_const(&mut b, sum, target));
    }
    let now = b.mul(&checks);
    let not_first = b.one_minus(first);
    let side = b.mux(now, first, latched, not_first);
    rec_edges.insert(latched, side);
    let other = b.one_minus(side);
    let out = b.mux(sel, side, picked, other);
    b.output(out);

    let mut hb = CircuitBuilder::new();
    let i = hb.input();
    let s = hb.input();
    let vs: Vec<GateId> = (0..rec.p()).map(|_| hb.input()).collect();
    let mut hin = vec![i];
    hin.extend(&vs);
    let hmap = hb.splice(&h, &hin, &[]);
    let shifted = hb.shift(hmap[h.outputs()[0]], -0.5);
    let fired = hb.sign(shifted);
    let either = hb.add(&[s, fired]);
    let or = hb.sign(either);
    hb.output(or);
    halting_gates.insert(0, side);
    Ok(RecurrentCircuit {
        underlying: b.finish(),
        initial_aux,
        rec_edges,
        halting_gates,
        halting: HaltingSpec::Circuit { circuit: hb.finish() },
        counter: None,
    })
}

/// Compiles a circuit whose underlying circuit is symmetric in its inputs.
/// Symmetry is sampled with `check_trials` random permutations.
pub fn compile_symmetric_circuit_to_inner_gnn(
    rec: &RecurrentCircuit,
    check_trials: usize,
    seed: u64,
    inner_budget: u64,
) -> Result<SymmetricArtifact, CompileError> {
    let report = rec.validate();
    if !report.is_ok() {
        return Err(CompileError::Unsupported(format!("invalid circuit: {:?}", report.violations)));
    }
    let (n, m) = (rec.n(), rec.m());
    if n == 0 || m == 0 {
        return Err(CompileError::Unsupported("need at least one input and one output".into()));
    }
    rec.underlying.check_symmetric_sampled(check_trials, seed).map_err(CompileError::NotSymmetric)?;
    let mut members = BTreeMap::new();
    members.insert(n + 1, Member::Recurrent(wrapper(rec, n == m)?));
    if n != m {
        let mut b = CircuitBuilder::new();
        let ins: Vec<GateId> = (0..=m).map(|_| b.input()).collect();
        b.output(ins[0]);
        members.insert(m + 1, Member::Plain(b.finish()));
    }
    let family = CircuitFamily::new(
        FamilyGenerator::Explicit { members },
        FamilyTags { sign_free: false, recurrent: true, tail_symmetric: true },
    );
    let gnn = RecCGnn::new(
        vec![LayerSpec { family, activation: "id".into() }],
        GnnHalting::FixedLayer { k: 1 },
        inner_budget,
    );
    let shape = GraphShape::complete_bipartite(n, m);
    let mut report = CompileReport::new(
        "circ2gnn-inner",
        ArtifactMetrics::Circuit(CircuitMetrics::of(rec)),
        ArtifactMetrics::Gnn(GnnMetrics::of(&gnn, &shape)),
    );
    report.gadget("switch", 1);
    if n == m {
        report.gadget("side-detector", 1);
        report.notes.push("inputs that are a permutation of 1..=m are ambiguous".into());
    }
    Ok(SymmetricArtifact { gnn, n, m, shape, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{run_gnn, RunOptions};
    use crate::graph::bipartite_encode;

    fn sum_and_product() -> RecurrentCircuit {
        let mut b = CircuitBuilder::new();
        let x = b.input();
        let y = b.input();
        let s = b.add(&[x, y]);
        let p = b.mul(&[x, y]);
        b.output(s);
        b.output(p);
        RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: BTreeMap::from([(x, x), (y, y)]),
            halting_gates: vec![],
            halting: HaltingSpec::AlwaysHalt,
            counter: None,
        }
    }

    fn run(art: &SymmetricArtifact, x: &[f64]) -> Vec<f64> {
        let g = bipartite_encode(art.n, art.m, x).unwrap();
        run_gnn(&art.gnn, &g, &RunOptions::default()).unwrap().graph.labels
    }

    #[test]
    fn sum_and_product_square() {
        let art = compile_symmetric_circuit_to_inner_gnn(&sum_and_product(), 50, 1, 100).unwrap();
        assert_eq!(run(&art, &[3.0, 4.0]), vec![3.0, 4.0, 7.0, 12.0]);
        assert!(art.is_ambiguous(&[2.0, 1.0]));
        assert!(!art.is_ambiguous(&[2.0, 2.0]));
    }

    #[test]
    fn single_output_and_recurrence() {
        let mut b = CircuitBuilder::new();
        let xs: Vec<GateId> = (0..3).map(|_| b.input()).collect();
        let s = b.add(&xs);
        b.output(s);
        let rec = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: xs.iter().map(|&x| (x, s)).collect(),
            halting_gates: vec![],
            halting: HaltingSpec::FixedIteration { k: 2 },
            counter: None,
        };
        let art = compile_symmetric_circuit_to_inner_gnn(&rec, 50, 1, 100).unwrap();
        let x = [1.0, 2.0, 4.0];
        let want = rec.run(&x, 10).unwrap().0;
        assert_eq!(run(&art, &x), vec![1.0, 2.0, 4.0, want[0]]);
    }

    #[test]
    fn asymmetric_rejected() {
        let mut b = CircuitBuilder::new();
        let x = b.input();
        let y = b.input();
        let neg = b.scale(y, -1.0);
        let d = b.add(&[x, neg]);
        b.output(d);
        let rec = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: BTreeMap::from([(x, x), (y, y)]),
            halting_gates: vec![],
            halting: HaltingSpec::AlwaysHalt,
            counter: None,
        };
        assert!(matches!(
            compile_symmetric_circuit_to_inner_gnn(&rec, 50, 1, 100),
            Err(CompileError::NotSymmetric(_))
        ));
    }
}
