//! Circuit building blocks: equality tests, finite-set indicator polynomials,
//! modular counters, switches, halting flags, and sequential composition of
//! recurrent circuits.
//!
//! The `emit_*` functions write into an existing [`CircuitBuilder`]; the
//! `build_*` functions wrap one emitter into a standalone [`GadgetHandle`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::CircuitBuilder;
use crate::circuit::{ExtendedCircuit, GateId};
use crate::recurrent::{fold_iteration_counter, HaltingSpec, RecurrentCircuit};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GadgetError {
    #[error("value {0} appears twice in the set")]
    DuplicateElement(f64),
    #[error("value {0} is not in the set")]
    NotInSet(f64),
    #[error("selector {0} appears twice")]
    DuplicateSelector(f64),
    #[error("switch needs at least one branch")]
    EmptySwitch,
    #[error("switch branches have different widths")]
    BranchWidth,
    #[error("first circuit has {outputs} outputs but second has {inputs} inputs")]
    Arity { outputs: usize, inputs: usize },
    #[error("halting circuit must have exactly one output")]
    HaltingOutputs,
}

/// A memory gate together with the gate that feeds it and its initial value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latch {
    pub gate: GateId,
    pub source: GateId,
    pub initial: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GadgetHandle {
    pub circuit: ExtendedCircuit,
    pub inputs: Vec<GateId>,
    pub outputs: Vec<GateId>,
    pub latches: Vec<Latch>,
}

impl GadgetHandle {
    /// Turns the fragment into a recurrent circuit whose latches are its
    /// memory, halting after `k` iterations. Only meaningful for gadgets
    /// without free inputs or whose inputs are fed back unchanged.
    pub fn into_recurrent(self, k: u64) -> RecurrentCircuit {
        let mut rec_edges: BTreeMap<GateId, GateId> = self.inputs.iter().map(|&g| (g, g)).collect();
        let mut initial_aux = vec![0.0; self.circuit.ell()];
        for l in &self.latches {
            rec_edges.insert(l.gate, l.source);
            let slot = self.circuit.aux_memory().iter().position(|&a| a == l.gate).expect("latch is aux");
            initial_aux[slot] = l.initial;
        }
        RecurrentCircuit {
            underlying: self.circuit,
            initial_aux,
            rec_edges,
            halting_gates: vec![],
            halting: HaltingSpec::FixedIteration { k },
            counter: None,
        }
    }
}

/// `1` if `x1 = x2`, else `0`, from two sign gates.
pub fn emit_equality(b: &mut CircuitBuilder, x1: GateId, x2: GateId) -> GateId {
    let mul1 = b.scale(x1, -1.0);
    let mul2 = b.scale(x2, -1.0);
    let add1 = b.add(&[x1, mul2]);
    let add2 = b.add(&[x2, mul1]);
    let s1 = b.sign(add1);
    let s2 = b.sign(add2);
    let add3 = b.add(&[s1, s2]);
    let mul3 = b.scale(add3, -1.0);
    b.shift(mul3, 1.0)
}

/// `1` if `x = c`, else `0`.
pub fn emit_eq_const(b: &mut CircuitBuilder, x: GateId, c: f64) -> GateId {
    let k = b.constant(c);
    emit_equality(b, x, k)
}

fn check_set(set: &[f64]) -> Result<(), GadgetError> {
    for (i, a) in set.iter().enumerate() {
        if set[..i].contains(a) {
            return Err(GadgetError::DuplicateElement(*a));
        }
    }
    Ok(())
}

/// Sign-free indicator of `a` on the finite set `set`: the interpolation
/// polynomial that is 1 at `a` and 0 at every other element.
pub fn emit_chi(b: &mut CircuitBuilder, x: GateId, set: &[f64], a: f64) -> Result<GateId, GadgetError> {
    check_set(set)?;
    if !set.contains(&a) {
        return Err(GadgetError::NotInSet(a));
    }
    let others: Vec<f64> = set.iter().copied().filter(|&v| v != a).collect();
    if others.is_empty() {
        return Ok(b.constant(1.0));
    }
    let neg = b.scale(x, -1.0);
    let mut factors = Vec::with_capacity(others.len() + 1);
    let mut norm = 1.0;
    for &ai in &others {
        let c = b.constant(ai);
        factors.push(b.add(&[c, neg]));
        norm *= ai - a;
    }
    factors.push(b.constant(1.0 / norm));
    Ok(b.mul(&factors))
}

/// Counter over `1..=d` held in a fresh aux gate. Returns `(current, next)`;
/// the caller wires `next` back into `current` with initial value 1.
pub fn emit_mod_counter(b: &mut CircuitBuilder, d: usize) -> (GateId, GateId) {
    assert!(d >= 1, "modulus must be positive");
    let cur = b.aux();
    let set: Vec<f64> = (1..=d).map(|v| v as f64).collect();
    let mut terms = Vec::with_capacity(d);
    for l in 1..=d {
        let succ = if l == d { 1.0 } else { (l + 1) as f64 };
        let chi = emit_chi(b, cur, &set, l as f64).expect("distinct counter values");
        let k = b.constant(succ);
        terms.push(b.mul(&[k, chi]));
    }
    let next = b.add(&terms);
    (cur, next)
}

/// Passes through the branch whose selector equals `counter`.
/// Every branch must have the same width; the result has that width.
pub fn emit_switch(
    b: &mut CircuitBuilder,
    branches: &[(f64, Vec<GateId>)],
    counter: GateId,
) -> Result<Vec<GateId>, GadgetError> {
    let Some(width) = branches.first().map(|(_, v)| v.len()) else {
        return Err(GadgetError::EmptySwitch);
    };
    if branches.iter().any(|(_, v)| v.len() != width) {
        return Err(GadgetError::BranchWidth);
    }
    let sel: Vec<f64> = branches.iter().map(|(s, _)| *s).collect();
    if let Err(GadgetError::DuplicateElement(v)) = check_set(&sel) {
        return Err(GadgetError::DuplicateSelector(v));
    }
    let chis: Vec<GateId> =
        sel.iter().map(|&s| emit_chi(b, counter, &sel, s)).collect::<Result<_, _>>()?;
    Ok((0..width)
        .map(|j| {
            let terms: Vec<GateId> =
                branches.iter().zip(&chis).map(|((_, v), &chi)| b.mul(&[v[j], chi])).collect();
            b.add(&terms)
        })
        .collect())
}

/// Gates of a halting flag: `t` is 1 exactly at the first iteration the
/// wrapped condition fires, `s` is the latch (1 until then, 0 after).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flag {
    pub s: GateId,
    pub s_next: GateId,
    pub t: GateId,
    pub tinv: GateId,
}

/// Splices `halting` onto `inputs` and wraps its decision in a latch.
pub fn emit_flag(
    b: &mut CircuitBuilder,
    halting: &ExtendedCircuit,
    inputs: &[GateId],
) -> Result<Flag, GadgetError> {
    if halting.m() != 1 {
        return Err(GadgetError::HaltingOutputs);
    }
    let s = b.aux();
    let map = b.splice(halting, inputs, &[]);
    let h = map[halting.outputs()[0]];
    let shifted = b.shift(h, -0.5);
    let fired = b.sign(shifted);
    let t = b.mul(&[fired, s]);
    let tinv = b.one_minus(t);
    let s_next = b.mul(&[s, tinv]);
    Ok(Flag { s, s_next, t, tinv })
}

pub fn build_equality_sign() -> GadgetHandle {
    let mut b = CircuitBuilder::new();
    let x1 = b.input();
    let x2 = b.input();
    let e = emit_equality(&mut b, x1, x2);
    let out = b.output(e);
    GadgetHandle { circuit: b.finish(), inputs: vec![x1, x2], outputs: vec![out], latches: vec![] }
}

pub fn build_chi_a(set: &[f64], a: f64) -> Result<GadgetHandle, GadgetError> {
    let mut b = CircuitBuilder::new();
    let x = b.input();
    let chi = emit_chi(&mut b, x, set, a)?;
    let out = b.output(chi);
    Ok(GadgetHandle { circuit: b.finish(), inputs: vec![x], outputs: vec![out], latches: vec![] })
}

pub fn build_mod_counter(d: usize) -> GadgetHandle {
    let mut b = CircuitBuilder::new();
    let (cur, next) = emit_mod_counter(&mut b, d);
    let out = b.output(cur);
    GadgetHandle {
        circuit: b.finish(),
        inputs: vec![],
        outputs: vec![out],
        latches: vec![Latch { gate: cur, source: next, initial: 1.0 }],
    }
}

/// Inputs: the counter, then each branch's `width` values in selector order.
pub fn build_switch(selectors: &[f64], width: usize) -> Result<GadgetHandle, GadgetError> {
    let mut b = CircuitBuilder::new();
    let counter = b.input();
    let branches: Vec<(f64, Vec<GateId>)> =
        selectors.iter().map(|&s| (s, (0..width).map(|_| b.input()).collect())).collect();
    let outs = emit_switch(&mut b, &branches, counter)?;
    let outputs = outs.into_iter().map(|g| b.output(g)).collect();
    let circuit = b.finish();
    Ok(GadgetHandle { inputs: circuit.inputs().to_vec(), circuit, outputs, latches: vec![] })
}

/// Inputs: the halting circuit's inputs. Outputs: `t`, `t⁻¹`.
pub fn build_flag(halting: &ExtendedCircuit) -> Result<GadgetHandle, GadgetError> {
    let mut b = CircuitBuilder::new();
    let inputs: Vec<GateId> = (0..halting.n()).map(|_| b.input()).collect();
    let f = emit_flag(&mut b, halting, &inputs)?;
    let o1 = b.output(f.t);
    let o2 = b.output(f.tinv);
    Ok(GadgetHandle {
        circuit: b.finish(),
        inputs,
        outputs: vec![o1, o2],
        latches: vec![Latch { gate: f.s, source: f.s_next, initial: 1.0 }],
    })
}

fn build_mask(k: usize, swap: bool) -> GadgetHandle {
    let mut b = CircuitBuilder::new();
    let a: Vec<GateId> = (0..k).map(|_| b.input()).collect();
    let p: Vec<GateId> = (0..k).map(|_| b.input()).collect();
    let t = b.input();
    let tinv = b.input();
    let (sa, sp) = if swap { (tinv, t) } else { (t, tinv) };
    let outs: Vec<GateId> = (0..k).map(|j| b.mux(a[j], sa, p[j], sp)).collect();
    let outputs = outs.into_iter().map(|g| b.output(g)).collect();
    let circuit = b.finish();
    GadgetHandle { inputs: circuit.inputs().to_vec(), circuit, outputs, latches: vec![] }
}

/// Inputs `y_1..y_m, p_1..p_m, t, t⁻¹`; output `y_j·t + p_j·t⁻¹`.
pub fn build_input_mux(m: usize) -> GadgetHandle {
    build_mask(m, false)
}

/// Inputs `a_1..a_k, p_1..p_k, t, t⁻¹`; output `a_j·t⁻¹ + p_j·t`.
pub fn build_aux_guard(k: usize) -> GadgetHandle {
    build_mask(k, true)
}

/// Circuit form of a halting function over `(i, v_1..v_p)`.
///
/// Threshold counts use exact equality against the target, so values that
/// only match within tolerance are not counted.
pub fn halting_circuit_for(spec: &HaltingSpec, p: usize) -> ExtendedCircuit {
    if let HaltingSpec::Circuit { circuit } = spec {
        return circuit.clone();
    }
    let mut b = CircuitBuilder::new();
    let i = b.input();
    let v: Vec<GateId> = (0..p).map(|_| b.input()).collect();
    let out = match spec {
        HaltingSpec::FixedIteration { k } => emit_eq_const(&mut b, i, *k as f64),
        HaltingSpec::ThresholdCount { target, bound } => {
            let hits = if v.is_empty() {
                b.constant(0.0)
            } else {
                let eqs: Vec<GateId> = v.iter().map(|&x| emit_eq_const(&mut b, x, *target)).collect();
                b.add(&eqs)
            };
            let margin = b.shift(hits, -(*bound as f64));
            b.sign(margin)
        }
        HaltingSpec::AlwaysHalt => b.constant(1.0),
        HaltingSpec::Circuit { .. } => unreachable!(),
    };
    b.output(out);
    b.finish()
}

/// Replaces a builtin halting function by an equivalent halting circuit.
pub fn lower_builtin_halting(rec: &RecurrentCircuit) -> RecurrentCircuit {
    let mut out = rec.clone();
    out.halting = HaltingSpec::Circuit { circuit: halting_circuit_for(&rec.halting, rec.p()) };
    out
}

/// Lowers builtin halting and folds the iteration number into memory when
/// the halting function reads it.
pub fn make_iteration_free(rec: &RecurrentCircuit) -> RecurrentCircuit {
    let lowered = lower_builtin_halting(rec);
    if lowered.is_iteration_free() {
        lowered
    } else {
        fold_iteration_counter(&lowered).expect("lowered halting is circuit-backed")
    }
}

/// One recurrent circuit computing `g ∘ f`.
///
/// Both blocks are evaluated every iteration. A flag latch over `f`'s
/// halting condition hands `f`'s outputs to `g`'s inputs exactly once;
/// before that, `g`'s memory holds its initial values, and after it `f`'s
/// memory is frozen. The composed circuit halts when the latch is down and
/// `g`'s halting condition fires, so it runs `iters(f) + iters(g)` times.
pub fn compose_recurrent(f: &RecurrentCircuit, g: &RecurrentCircuit) -> Result<RecurrentCircuit, GadgetError> {
    if f.m() != g.n() {
        return Err(GadgetError::Arity { outputs: f.m(), inputs: g.n() });
    }
    let f = make_iteration_free(f);
    let g = make_iteration_free(g);
    let fh = f.halting.circuit().expect("lowered");
    let gh = g.halting.circuit().expect("lowered");
    if fh.m() != 1 || gh.m() != 1 {
        return Err(GadgetError::HaltingOutputs);
    }

    let mut b = CircuitBuilder::new();
    let x: Vec<GateId> = (0..f.n()).map(|_| b.input()).collect();
    let fa: Vec<GateId> = (0..f.ell()).map(|_| b.aux()).collect();
    let gx: Vec<GateId> = (0..g.n()).map(|_| b.aux()).collect();
    let ga: Vec<GateId> = (0..g.ell()).map(|_| b.aux()).collect();
    let fmap = b.splice(&f.underlying, &x, &fa);
    let gmap = b.splice(&g.underlying, &gx, &ga);

    // The halting circuit no longer reads its first input.
    let unused = b.constant(0.0);
    let mut hin = vec![unused];
    hin.extend(f.halting_gates.iter().map(|&h| fmap[h]));
    let flag = emit_flag(&mut b, fh, &hin)?;
    let s_pass = b.one_minus(flag.s);
    let before = b.mul(&[flag.s, flag.tinv]);
    let not_before = b.one_minus(before);

    let mut rec_edges = BTreeMap::new();
    let src = |rec: &RecurrentCircuit, map: &[GateId], gate: GateId| map[rec.rec_edges[&gate]];
    for (own, &mine) in f.memory_gates().zip(x.iter().chain(&fa)) {
        let s = src(&f, &fmap, own);
        let next = b.mux(s, before, mine, not_before);
        rec_edges.insert(mine, next);
    }
    for (j, &mine) in gx.iter().enumerate() {
        let f_out = fmap[f.underlying.outputs()[j]];
        let s = src(&g, &gmap, g.underlying.inputs()[j]);
        let handoff = b.mul(&[f_out, flag.t]);
        let run = b.mul(&[s, s_pass]);
        let hold = b.mul(&[mine, before]);
        let next = b.add(&[handoff, run, hold]);
        rec_edges.insert(mine, next);
    }
    for (own, &mine) in g.underlying.aux_memory().iter().zip(&ga) {
        let s = src(&g, &gmap, *own);
        let next = b.mux(mine, flag.s, s, s_pass);
        rec_edges.insert(mine, next);
    }
    rec_edges.insert(flag.s, flag.s_next);
    for &o in g.underlying.outputs() {
        b.output(gmap[o]);
    }
    let mut halting_gates = vec![flag.s];
    halting_gates.extend(g.halting_gates.iter().map(|&h| gmap[h]));

    let mut hb = CircuitBuilder::new();
    let i = hb.input();
    let s = hb.input();
    let gv: Vec<GateId> = (0..g.p()).map(|_| hb.input()).collect();
    let latched = emit_eq_const(&mut hb, s, 0.0);
    let mut ghin = vec![i];
    ghin.extend(&gv);
    let hmap = hb.splice(gh, &ghin, &[]);
    let shifted = hb.shift(hmap[gh.outputs()[0]], -0.5);
    let fired = hb.sign(shifted);
    let both = hb.mul(&[latched, fired]);
    hb.output(both);

    let mut initial_aux = f.initial_aux.clone();
    initial_aux.extend(std::iter::repeat_n(0.0, g.n()));
    initial_aux.extend(&g.initial_aux);
    initial_aux.push(1.0);
    Ok(RecurrentCircuit {
        underlying: b.finish(),
        initial_aux,
        rec_edges,
        halting_gates,
        halting: HaltingSpec::Circuit { circuit: hb.finish() },
        counter: None,
    })
}
