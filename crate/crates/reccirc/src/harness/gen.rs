//! Seeded random instances: recurrent circuits, predecessor-form circuits,
//! symmetric templates, labelled graphs and GNNs.
//!
//! Values are small integers so products stay exact; instances whose runs
//! overflow or leave [`VALUE_BOUND`] are rejected and redrawn.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::CircuitBuilder;
use crate::circuit::GateId;
use crate::gadgets::emit_eq_const;
use crate::gnn::{
    run_gnn, CircuitFamily, FamilyGenerator, GnnHalting, LayerSpec, RecCGnn, RunOptions,
};
use crate::graph::{GraphShape, LabelledGraph};
use crate::harness::fixtures::eq_zero_halting;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

/// Largest magnitude any gate may reach in an accepted instance. Keeps sums
/// with many unit neighbours exact.
pub const VALUE_BOUND: f64 = 1e9;

/// Independent stream per trial, so trials can run in any order.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(trial as u64);
    r
}

fn int(rng: &mut (impl Rng + ?Sized), range: i64) -> f64 {
    rng.random_range(-range..=range) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitConstraints {
    pub max_gates: usize,
    pub halting_within: u64,
    pub sign_free: bool,
    pub max_inputs: usize,
    pub max_outputs: usize,
    pub value_range: i64,
}

impl Default for CircuitConstraints {
    fn default() -> Self {
        CircuitConstraints {
            max_gates: 15,
            halting_within: 12,
            sign_free: false,
            max_inputs: 2,
            max_outputs: 2,
            value_range: 4,
        }
    }
}

/// A random recurrent circuit halting after exactly `k ≤ halting_within`
/// iterations on every input. The halting function is one of: an aux
/// countdown read by an equality test, a circuit comparing the iteration
/// number with `k`, or the builtin fixed-iteration rule.
pub fn gen_random_circuit(rng: &mut (impl Rng + ?Sized), c: &CircuitConstraints) -> RecurrentCircuit {
    assert!(c.max_gates >= 6 && c.halting_within >= 1, "constraints too tight");
    loop {
        let n = rng.random_range(1..=c.max_inputs);
        let m = rng.random_range(1..=c.max_outputs);
        let ell = rng.random_range(0..=1);
        let consts = rng.random_range(0..=1);
        let style = rng.random_range(0..3);
        let counter_gates = if style == 0 { 3 } else { 0 };
        let fixed = n + m + ell + consts + counter_gates;
        if fixed >= c.max_gates {
            continue;
        }
        let internal = rng.random_range(1..=c.max_gates - fixed);
        let k = rng.random_range(1..=c.halting_within);

        let mut b = CircuitBuilder::new();
        let inputs: Vec<GateId> = (0..n).map(|_| b.input()).collect();
        let aux: Vec<GateId> = (0..ell).map(|_| b.aux()).collect();
        let mut initial_aux: Vec<f64> = (0..ell).map(|_| int(rng, 2)).collect();
        let mut pool: Vec<GateId> = inputs.iter().chain(&aux).copied().collect();
        for _ in 0..consts {
            let v = int(rng, c.value_range);
            pool.push(b.constant(v));
        }
        let mut inner = Vec::with_capacity(internal);
        for _ in 0..internal {
            let roll = rng.random_range(0..10);
            let g = if roll == 0 && !c.sign_free {
                let p = *pool.choose(rng).expect("pool non-empty");
                b.sign(p)
            } else {
                let fan = rng.random_range(1..=pool.len().min(3));
                let preds: Vec<GateId> = pool.choose_multiple(rng, fan).copied().collect();
                if roll < 5 {
                    b.add(&preds)
                } else {
                    b.mul(&preds)
                }
            };
            inner.push(g);
            pool.push(g);
        }
        for _ in 0..m {
            let o = *inner.choose(rng).expect("internal gates exist");
            b.output(o);
        }
        let mut rec_edges = BTreeMap::new();
        for &g in inputs.iter().chain(&aux) {
            let src = if rng.random_bool(0.3) { g } else { *inner.choose(rng).expect("internal") };
            rec_edges.insert(g, src);
        }
        let (halting_gates, halting) = match style {
            0 => {
                let t = b.aux();
                initial_aux.push(k as f64);
                let dec = b.shift(t, -1.0);
                rec_edges.insert(t, dec);
                (vec![dec], HaltingSpec::Circuit { circuit: eq_zero_halting() })
            }
            1 => {
                let mut h = CircuitBuilder::new();
                let i = h.input();
                h.input();
                let eq = emit_eq_const(&mut h, i, k as f64);
                h.output(eq);
                (vec![*inner.choose(rng).expect("internal")], HaltingSpec::Circuit { circuit: h.finish() })
            }
            _ => (vec![], HaltingSpec::FixedIteration { k }),
        };
        let rec = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux,
            rec_edges,
            halting_gates,
            halting,
            counter: None,
        };
        debug_assert!(rec.validate().is_ok(), "{:?}", rec.validate());
        return rec;
    }
}

/// True when `rec` halts on `x` within `budget` with every gate value of
/// every iteration finite and within [`VALUE_BOUND`].
pub fn well_behaved(rec: &RecurrentCircuit, x: &[f64], budget: u64) -> bool {
    let Ok((_, trace)) = rec.run(x, budget) else { return false };
    trace.records.iter().all(|r| match rec.underlying.evaluate(&r.inputs, &r.aux) {
        Ok((_, t)) => t.gate_values.iter().all(|v| v.abs() <= VALUE_BOUND),
        Err(_) => false,
    })
}

/// A circuit from `draw` together with an input it handles well.
pub fn gen_instance(
    rng: &mut impl Rng,
    range: i64,
    budget: u64,
    mut draw: impl FnMut(&mut dyn rand::RngCore) -> RecurrentCircuit,
) -> (RecurrentCircuit, Vec<f64>) {
    loop {
        let rec = draw(rng as &mut dyn rand::RngCore);
        let x: Vec<f64> = (0..rec.n()).map(|_| int(rng, range)).collect();
        if well_behaved(&rec, &x, budget) {
            return (rec, x);
        }
    }
}

/// A circuit in predecessor form with one global activation level.
///
/// Memory is a one-hot shift register of `K ≤ 2` bits (plus inputs); bit
/// values survive `sign` and `id`, so the circuit halts after `K + 1`
/// iterations, when the last bit arrives at the halting gate.
pub fn gen_predecessor_form(rng: &mut (impl Rng + ?Sized), max_gates: usize) -> RecurrentCircuit {
    loop {
        let n = rng.random_range(1..=2);
        let bits = rng.random_range(1..=3);
        let levels = 3;
        let act_level = rng.random_range(1..levels);
        let act = if rng.random_bool(0.5) { "sign" } else { "id" };
        let kinds: Vec<u8> = (1..=levels)
            .map(|l| if l == act_level { 2 } else { rng.random_range(0..2) })
            .collect();
        let extra: Vec<usize> = (0..levels).map(|_| rng.random_range(1..=2)).collect();
        let total = n + bits + 1 + extra.iter().sum::<usize>() + levels * bits;
        if total > max_gates {
            continue;
        }
        let mut b = CircuitBuilder::new();
        let xs: Vec<GateId> = (0..n).map(|_| b.input()).collect();
        let bs: Vec<GateId> = (0..bits).map(|_| b.aux()).collect();
        let mut carried = bs.clone();
        let mut prev: Vec<GateId> = xs.iter().chain(&bs).copied().collect();
        for (l, &kind) in kinds.iter().enumerate() {
            let emit = |b: &mut CircuitBuilder, preds: &[GateId]| match kind {
                0 => b.add(preds),
                1 => b.mul(preds),
                _ => b.act(act, preds[0]),
            };
            carried = carried.iter().map(|&g| emit(&mut b, &[g])).collect();
            let mut level: Vec<GateId> = carried.clone();
            for _ in 0..extra[l] {
                let fan = if kind == 2 { 1 } else { rng.random_range(1..=prev.len().min(3)) };
                let preds: Vec<GateId> = prev.choose_multiple(rng, fan).copied().collect();
                level.push(emit(&mut b, &preds));
            }
            prev = level;
        }
        let fresh: Vec<GateId> = prev[bits..].to_vec();
        let out = *fresh.choose(rng).expect("extra gates");
        b.output(out);
        let mut rec_edges = BTreeMap::new();
        for &x in &xs {
            rec_edges.insert(x, *prev.choose(rng).expect("last level"));
        }
        rec_edges.insert(bs[0], carried[0]);
        for j in 1..bits {
            rec_edges.insert(bs[j], carried[j - 1]);
        }
        let mut h = CircuitBuilder::new();
        h.input();
        let v = h.input();
        let s = h.shift(v, -0.5);
        let f = h.sign(s);
        h.output(f);
        let mut initial_aux = vec![0.0; bits];
        initial_aux[0] = 1.0;
        let rec = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux,
            rec_edges,
            halting_gates: vec![carried[bits - 1]],
            halting: HaltingSpec::Circuit { circuit: h.finish() },
            counter: None,
        };
        debug_assert!(rec.is_predecessor_form());
        return rec;
    }
}

/// Symmetric template with `n` inputs and `m` outputs built from power sums
/// and elementary symmetric polynomials, plus an aux countdown that adds
/// into the outputs and stops the run after at most `max_iter` iterations.
pub fn gen_symmetric_template(rng: &mut (impl Rng + ?Sized), n: usize, m: usize, max_iter: u64) -> RecurrentCircuit {
    let mut b = CircuitBuilder::new();
    let xs: Vec<GateId> = (0..n).map(|_| b.input()).collect();
    let t = b.aux();
    let k = rng.random_range(1..=max_iter);
    let dec = b.shift(t, -1.0);
    let mut sym = Vec::new();
    for _ in 0..m {
        let g = match rng.random_range(0..3) {
            0 => b.add(&xs),
            1 => b.mul(&xs),
            _ => {
                let sq: Vec<GateId> = xs.iter().map(|&x| b.mul(&[x, x])).collect();
                b.add(&sq)
            }
        };
        let g = if rng.random_bool(0.5) { b.add(&[g, t]) } else { g };
        sym.push(g);
        b.output(g);
    }
    // inputs either hold or all take the same symmetric value
    let feed = if rng.random_bool(0.5) { None } else { Some(*sym.choose(rng).expect("m ≥ 1")) };
    let mut rec_edges: BTreeMap<GateId, GateId> = xs.iter().map(|&x| (x, feed.unwrap_or(x))).collect();
    rec_edges.insert(t, dec);
    RecurrentCircuit {
        underlying: b.finish(),
        initial_aux: vec![k as f64],
        rec_edges,
        halting_gates: vec![dec],
        halting: HaltingSpec::Circuit { circuit: eq_zero_halting() },
        counter: None,
    }
}

pub fn gen_graph(rng: &mut (impl Rng + ?Sized), max_vertices: usize, range: i64) -> LabelledGraph {
    let n = rng.random_range(1..=max_vertices);
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|_| rng.random_bool(0.5)).collect();
    let labels = (0..n).map(|_| int(rng, range)).collect();
    LabelledGraph::new(n, edges, labels).expect("generated edges are valid")
}

/// A uniformly random relabelling of `0..n`.
pub fn gen_permutation(rng: &mut (impl Rng + ?Sized), n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConstraints {
    pub max_vertices: usize,
    pub max_period: usize,
    /// Upper bound on the number of layers before halting.
    pub max_layers: usize,
    /// `Some(cap)` draws per-vertex Fibonacci members with iteration cap ≤ cap.
    pub inner_cap: Option<u32>,
    /// Fixed-layer halting only.
    pub fixed_layers: bool,
    pub sign_activations: bool,
}

impl Default for GnnConstraints {
    fn default() -> Self {
        GnnConstraints {
            max_vertices: 5,
            max_period: 3,
            max_layers: 8,
            inner_cap: None,
            fixed_layers: false,
            sign_activations: false,
        }
    }
}

fn gen_layer(rng: &mut (impl Rng + ?Sized), c: &GnnConstraints) -> LayerSpec {
    let generator = match (c.inner_cap, rng.random_range(0..4)) {
        (Some(cap), r) if r < 3 => FamilyGenerator::InnerFibonacci {
            cap: rng.random_range(1..=cap),
            beta: *[0.0, 0.5, 1.0, -1.0].choose(rng).expect("non-empty"),
        },
        (_, 0) => FamilyGenerator::Sum,
        (_, 1) => FamilyGenerator::Product,
        _ => FamilyGenerator::Affine {
            alpha: rng.random_range(-1..=2) as f64,
            beta: rng.random_range(-1..=1) as f64,
            gamma: rng.random_range(-1..=1) as f64,
        },
    };
    let activation = if c.sign_activations && rng.random_bool(0.2) { "sign" } else { "id" };
    LayerSpec { family: CircuitFamily::template(generator), activation: activation.into() }
}

/// A GNN and graph on which it halts within `max_layers` layers with all
/// labels inside [`VALUE_BOUND`].
pub fn gen_gnn_instance(rng: &mut (impl Rng + ?Sized), c: &GnnConstraints) -> (RecCGnn, LabelledGraph) {
    loop {
        let g = gen_graph(rng, c.max_vertices, 3);
        let d = rng.random_range(1..=c.max_period);
        let layers: Vec<LayerSpec> = (0..d).map(|_| gen_layer(rng, c)).collect();
        let halting = if c.fixed_layers || rng.random_bool(0.5) {
            GnnHalting::FixedLayer { k: rng.random_range(1..=c.max_layers) }
        } else {
            let target = *g.labels.choose(rng).expect("n ≥ 1") + rng.random_range(-1..=1) as f64;
            GnnHalting::ThresholdCount { target, bound: rng.random_range(0..g.n) }
        };
        let gnn = RecCGnn::new(layers, halting, 16);
        let mut ok = true;
        let opts = RunOptions { outer_budget: c.max_layers, ..Default::default() };
        let run = crate::gnn::run_gnn_observed(&gnn, &g, &opts, &mut |_, h| {
            ok &= h.iter().all(|v| v.abs() <= VALUE_BOUND);
        });
        if run.is_ok() && ok {
            return (gnn, g);
        }
    }
}

/// Shape-only variant used where the labels are drawn separately.
pub fn gen_shape(rng: &mut (impl Rng + ?Sized), max_vertices: usize) -> GraphShape {
    gen_graph(rng, max_vertices, 0).shape()
}

/// Checks that `run_gnn` is usable on the instance; handy in shrinking.
pub fn gnn_halts(gnn: &RecCGnn, g: &LabelledGraph, budget: usize) -> bool {
    run_gnn(gnn, g, &RunOptions { outer_budget: budget, ..Default::default() }).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circuits_validate_and_halt_in_time() {
        let mut rng = trial_rng(7, 0);
        let c = CircuitConstraints { halting_within: 5, sign_free: true, ..Default::default() };
        for _ in 0..50 {
            let rec = gen_random_circuit(&mut rng, &c);
            assert!(rec.validate().is_ok());
            assert!(rec.underlying.size() <= 15);
            assert!(rec.underlying.is_sign_free());
            for _ in 0..20 {
                let x: Vec<f64> = (0..rec.n()).map(|_| int(&mut rng, 4)).collect();
                match rec.run(&x, 5) {
                    Ok((_, t)) => assert!(t.iterations() <= 5),
                    Err(crate::recurrent::RunError::Eval { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn predecessor_form_generator() {
        let mut rng = trial_rng(3, 1);
        for _ in 0..100 {
            let rec = gen_predecessor_form(&mut rng, 40);
            assert!(rec.validate().is_ok());
            assert!(rec.is_predecessor_form());
            let (_, t) = rec.run(&[1.0, 2.0][..rec.n()], 10).unwrap();
            assert_eq!(t.iterations(), rec.ell());
        }
    }

    #[test]
    fn symmetric_templates_are_symmetric() {
        let mut rng = trial_rng(5, 2);
        for n in 1..=4 {
            for m in 1..=3 {
                let rec = gen_symmetric_template(&mut rng, n, m, 3);
                assert!(rec.validate().is_ok());
                rec.underlying.check_symmetric_sampled(200, 9).unwrap();
            }
        }
    }

    #[test]
    fn gnn_instances_halt() {
        let mut rng = trial_rng(11, 3);
        for _ in 0..30 {
            let (gnn, g) = gen_gnn_instance(&mut rng, &GnnConstraints::default());
            assert!(gnn_halts(&gnn, &g, 8));
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let a: u64 = trial_rng(1, 5).random();
        let b: u64 = trial_rng(1, 5).random();
        let c: u64 = trial_rng(1, 6).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
