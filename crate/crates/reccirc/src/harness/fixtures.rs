//! Small hand-built recurrent circuits used by tests, docs and the CLI.

use std::collections::BTreeMap;

use crate::builder::CircuitBuilder;
use crate::gadgets::emit_eq_const;
use crate::recurrent::{HaltingSpec, RecurrentCircuit};

/// `x ↦ F(x)` for `x ≥ 2`: two aux gates hold consecutive Fibonacci
/// numbers, and the halting circuit fires when `i = x − 1`.
pub fn fibonacci() -> RecurrentCircuit {
    let mut b = CircuitBuilder::new();
    let x = b.input();
    let a1 = b.aux();
    let a2 = b.aux();
    let sum = b.add(&[a1, a2]);
    b.output(sum);
    let underlying = b.finish();

    let mut h = CircuitBuilder::new();
    let i = h.input();
    let v = h.input();
    let prev = h.shift(v, -1.0);
    let eq = crate::gadgets::emit_equality(&mut h, prev, i);
    h.output(eq);

    RecurrentCircuit {
        underlying,
        initial_aux: vec![1.0, 0.0],
        rec_edges: BTreeMap::from([(x, x), (a1, sum), (a2, a1)]),
        halting_gates: vec![x],
        halting: HaltingSpec::Circuit { circuit: h.finish() },
        counter: None,
    }
}

/// `x ↦ x + k` in `k` iterations: an aux gate counts down from `k` and the
/// circuit halts once the decremented value reaches 0.
pub fn decrement(k: u32) -> RecurrentCircuit {
    let mut b = CircuitBuilder::new();
    let x = b.input();
    let a = b.aux();
    let dec = b.shift(a, -1.0);
    let inc = b.shift(x, 1.0);
    b.output(inc);
    RecurrentCircuit {
        underlying: b.finish(),
        initial_aux: vec![k as f64],
        rec_edges: BTreeMap::from([(x, inc), (a, dec)]),
        halting_gates: vec![dec],
        halting: HaltingSpec::Circuit { circuit: eq_zero_halting() },
        counter: None,
    }
}

/// Halting circuit over `(i, v)` firing when `v = 0`.
pub fn eq_zero_halting() -> crate::circuit::ExtendedCircuit {
    let mut h = CircuitBuilder::new();
    h.input();
    let v = h.input();
    let eq = emit_eq_const(&mut h, v, 0.0);
    h.output(eq);
    h.finish()
}

fn one_shot(scale: f64, offset: f64, halting: HaltingSpec) -> RecurrentCircuit {
    let mut b = CircuitBuilder::new();
    let x = b.input();
    let y = if scale == 1.0 { x } else { b.scale(x, scale) };
    let y = if offset == 0.0 { y } else { b.shift(y, offset) };
    b.output(y);
    RecurrentCircuit {
        underlying: b.finish(),
        initial_aux: vec![],
        rec_edges: BTreeMap::from([(x, x)]),
        halting_gates: vec![],
        halting,
        counter: None,
    }
}

/// `x ↦ x + 1`, halting at iteration 1.
pub fn plus_one() -> RecurrentCircuit {
    one_shot(1.0, 1.0, HaltingSpec::FixedIteration { k: 1 })
}

/// `x ↦ 2x`, halting at iteration 1.
pub fn times_two() -> RecurrentCircuit {
    one_shot(2.0, 0.0, HaltingSpec::AlwaysHalt)
}

/// `x ↦ x`, halting at iteration 1.
pub fn identity() -> RecurrentCircuit {
    one_shot(1.0, 0.0, HaltingSpec::AlwaysHalt)
}

/// An aux gate that feeds itself forever; the halting circuit is constant 0.
pub fn never_halts() -> RecurrentCircuit {
    let mut b = CircuitBuilder::new();
    let x = b.input();
    let a = b.aux();
    b.output(a);
    let mut h = CircuitBuilder::new();
    h.input();
    h.input();
    let z = h.constant(0.0);
    h.output(z);
    RecurrentCircuit {
        underlying: b.finish(),
        initial_aux: vec![1.0],
        rec_edges: BTreeMap::from([(x, x), (a, a)]),
        halting_gates: vec![a],
        halting: HaltingSpec::Circuit { circuit: h.finish() },
        counter: None,
    }
}

/// Per-vertex Fibonacci member of the given arity over `(own, neighbours…)`.
///
/// Iteration `i` outputs `F(i + 1) + β·Σ neighbours` and the circuit halts
/// once `i ≥ own − 1` or `i ≥ cap`, so it always halts within `cap` steps.
pub fn inner_fibonacci(arity: usize, cap: u32, beta: f64) -> RecurrentCircuit {
    assert!(arity >= 1, "the own label is always present");
    let mut b = CircuitBuilder::new();
    let ins: Vec<_> = (0..arity).map(|_| b.input()).collect();
    let a1 = b.aux();
    let a2 = b.aux();
    let sum = b.add(&[a1, a2]);
    let out = if arity > 1 {
        let nb = b.add(&ins[1..]);
        let scaled = b.scale(nb, beta);
        b.add(&[sum, scaled])
    } else {
        sum
    };
    b.output(out);

    let mut h = CircuitBuilder::new();
    let i = h.input();
    let v = h.input();
    let neg_v = h.scale(v, -1.0);
    let by_value = h.add(&[i, neg_v]);
    let by_value = h.shift(by_value, 1.5);
    let by_value = h.sign(by_value);
    let by_cap = h.shift(i, -(cap as f64) + 0.5);
    let by_cap = h.sign(by_cap);
    let either = h.add(&[by_value, by_cap]);
    let fire = h.sign(either);
    h.output(fire);

    let mut rec_edges: BTreeMap<_, _> = ins.iter().map(|&g| (g, g)).collect();
    rec_edges.insert(a1, sum);
    rec_edges.insert(a2, a1);
    RecurrentCircuit {
        underlying: b.finish(),
        initial_aux: vec![1.0, 0.0],
        rec_edges,
        halting_gates: vec![ins[0]],
        halting: HaltingSpec::Circuit { circuit: h.finish() },
        counter: None,
    }
}
