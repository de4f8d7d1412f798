//! Deliberately naive reference implementations.
//!
//! Nothing here shares code with the optimized evaluators beyond the data
//! types: gates are evaluated by memoized recursion, memory states by the
//! recursive definition `mem(0) = (x, a0)`, `mem(i) = R(mem(i-1))`, and GNN
//! layers by rebuilding members from their templates every time.

use std::collections::HashMap;

use crate::activation::ActivationRegistry;
use crate::circuit::{ExtendedCircuit, GateId, GateKind};
use crate::gnn::{GnnHalting, Member, RecCGnn};
use crate::graph::LabelledGraph;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

const MATCH: f64 = 1e-9;

fn gate_value(
    c: &ExtendedCircuit,
    g: GateId,
    x: &[f64],
    a: &[f64],
    memo: &mut HashMap<GateId, f64>,
) -> Result<f64, String> {
    if let Some(&v) = memo.get(&g) {
        return Ok(v);
    }
    let preds = c.preds(g);
    let mut vals = Vec::with_capacity(preds.len());
    for &p in preds {
        vals.push(gate_value(c, p, x, a, memo)?);
    }
    let v = match c.kind(g) {
        GateKind::Input(i) => x[*i],
        GateKind::AuxMemory(i) => a[*i],
        GateKind::Constant(v) => *v,
        GateKind::Add => vals.iter().fold(0.0, |s, v| s + v),
        GateKind::Mul => vals.iter().fold(1.0, |s, v| s * v),
        GateKind::Activation(name) => {
            let f = ActivationRegistry::builtin().get(name).ok_or_else(|| format!("unknown activation {name}"))?;
            f(vals[0])
        }
        GateKind::Output(_) => vals[0],
    };
    if !v.is_finite() {
        return Err(format!("gate {g} is not finite"));
    }
    memo.insert(g, v);
    Ok(v)
}

/// Values of the listed gates on `(x, a)`.
pub fn naive_eval(c: &ExtendedCircuit, gates: &[GateId], x: &[f64], a: &[f64]) -> Result<Vec<f64>, String> {
    if x.len() != c.n() || a.len() != c.ell() {
        return Err("arity mismatch".into());
    }
    let mut memo = HashMap::new();
    gates.iter().map(|&g| gate_value(c, g, x, a, &mut memo)).collect()
}

fn halts(spec: &HaltingSpec, i: u64, v: &[f64]) -> Result<bool, String> {
    Ok(match spec {
        HaltingSpec::Circuit { circuit } => {
            let mut input = vec![i as f64];
            input.extend_from_slice(v);
            naive_eval(circuit, circuit.outputs(), &input, &[])?[0] > 0.5
        }
        HaltingSpec::FixedIteration { k } => i == *k,
        HaltingSpec::ThresholdCount { target, bound } => {
            v.iter().filter(|&&u| (u - target).abs() <= MATCH).count() > *bound
        }
        HaltingSpec::AlwaysHalt => true,
    })
}

/// Memory state `(inputs, aux)` entering iteration `i + 1`.
fn mem(rec: &RecurrentCircuit, x: &[f64], i: u64) -> Result<(Vec<f64>, Vec<f64>), String> {
    if i == 0 {
        return Ok((x.to_vec(), rec.initial_aux.clone()));
    }
    let (px, pa) = mem(rec, x, i - 1)?;
    let c = &rec.underlying;
    let src = |gs: &[GateId]| -> Vec<GateId> { gs.iter().map(|g| rec.rec_edges[g]).collect() };
    let nx = naive_eval(c, &src(c.inputs()), &px, &pa)?;
    let na = naive_eval(c, &src(c.aux_memory()), &px, &pa)?;
    Ok((nx, na))
}

/// Output of `rec` on `x` and the number of iterations, or an error string
/// when it fails or does not halt within `budget`.
pub fn naive_run(rec: &RecurrentCircuit, x: &[f64], budget: u64) -> Result<(Vec<f64>, u64), String> {
    if x.len() != rec.n() {
        return Err("arity mismatch".into());
    }
    for i in 1..=budget {
        let (mx, ma) = mem(rec, x, i - 1)?;
        let hv = naive_eval(&rec.underlying, &rec.halting_gates, &mx, &ma)?;
        if halts(&rec.halting, i, &hv)? {
            return Ok((naive_eval(&rec.underlying, rec.underlying.outputs(), &mx, &ma)?, i));
        }
    }
    Err(format!("no halt within {budget}"))
}

fn gnn_halts(spec: &GnnHalting, layer: usize, labels: &[f64]) -> Result<bool, String> {
    Ok(match spec {
        GnnHalting::FixedLayer { k } => layer == *k,
        GnnHalting::ThresholdCount { target, bound } => {
            labels.iter().filter(|&&u| (u - target).abs() <= MATCH).count() > *bound
        }
        GnnHalting::Family { family } => {
            let member = family.build(labels.len() + 1).map_err(|e| e.to_string())?;
            let Member::Plain(c) = member else { return Err("recurrent halting member".into()) };
            let mut sorted = labels.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut x = vec![layer as f64];
            x.extend(sorted);
            naive_eval(&c, c.outputs(), &x, &[])?[0] > 0.5
        }
    })
}

/// Runs `gnn` on `g` layer by layer. Neighbour multisets are handed to the
/// members sorted by value, which agrees with vertex order for the
/// tail-symmetric families the oracle is meant for.
pub fn brute_force_gnn(gnn: &RecCGnn, g: &LabelledGraph, budget: usize) -> Result<(Vec<f64>, usize), String> {
    let adj = g.adjacency();
    let mut h = g.labels.clone();
    let reg = ActivationRegistry::builtin();
    for layer in 1..=budget {
        let spec = &gnn.layers[(layer - 1) % gnn.layers.len()];
        let sigma = reg.get(&spec.activation).ok_or("unknown activation")?;
        let mut next = Vec::with_capacity(h.len());
        for (v, nbrs) in adj.iter().enumerate() {
            let mut ms: Vec<f64> = nbrs.iter().map(|&u| h[u]).collect();
            ms.sort_by(f64::total_cmp);
            let mut x = vec![h[v]];
            x.extend(ms);
            let y = match spec.family.build(x.len()).map_err(|e| e.to_string())? {
                Member::Plain(c) => naive_eval(&c, c.outputs(), &x, &[])?[0],
                Member::Recurrent(r) => naive_run(&r, &x, gnn.inner_budget)?.0[0],
            };
            let y = sigma(y);
            if !y.is_finite() {
                return Err(format!("vertex {v} not finite at layer {layer}"));
            }
            next.push(y);
        }
        h = next;
        if gnn_halts(&gnn.halting, layer, &h)? {
            return Ok((h, layer));
        }
    }
    Err(format!("no halt within {budget} layers"))
}
