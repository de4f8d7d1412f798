//! Growth of a single recurrent `exp` gate: after `k` iterations on input
//! `x` the output is the `k`-fold iterated exponential of `x`, so no fixed
//! stack of layers with global `exp` activations keeps up with every
//! iteration count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::builder::CircuitBuilder;
use crate::recurrent::{HaltingSpec, RecurrentCircuit, RunError};

/// `x ↦ exp(x)` fed back into itself, halting after `k` iterations.
pub fn exp_circuit(k: u64) -> RecurrentCircuit {
    let mut b = CircuitBuilder::new();
    let x = b.input();
    let e = b.act("exp", x);
    b.output(e);
    RecurrentCircuit {
        underlying: b.finish(),
        initial_aux: vec![],
        rec_edges: BTreeMap::from([(x, e)]),
        halting_gates: vec![e],
        halting: HaltingSpec::FixedIteration { k },
        counter: None,
    }
}

/// `(e↑↑d)^p` with `e↑↑0 = 1`.
pub fn tower_power(d: u32, p: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    let mut t = 1.0f64;
    for _ in 0..d {
        t = t.exp();
    }
    t.powf(p)
}

/// `exp` applied `k` times to `x`, computed directly.
pub fn iterated_exp(x: f64, k: u64) -> f64 {
    (0..k).fold(x, |v, _| v.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerRow {
    pub iterations: u64,
    /// `None` once the value overflows.
    pub value: Option<f64>,
    pub direct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpTowerReport {
    pub x: f64,
    pub rows: Vec<TowerRow>,
    pub first_overflow: Option<u64>,
    pub monotone: bool,
}

/// Runs the circuit for `1..=depth_bound` iterations.
pub fn exp_tower_demo(x: f64, depth_bound: u64) -> ExpTowerReport {
    let mut rows = Vec::new();
    let mut first_overflow = None;
    for k in 1..=depth_bound {
        let value = match exp_circuit(k).run(&[x], k + 1) {
            Ok((out, _)) => Some(out[0]),
            Err(RunError::Eval { .. }) => None,
            Err(e) => panic!("exp circuit failed unexpectedly: {e}"),
        };
        if value.is_none() && first_overflow.is_none() {
            first_overflow = Some(k);
        }
        rows.push(TowerRow { iterations: k, value, direct: iterated_exp(x, k) });
    }
    let finite: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
    let monotone = finite.windows(2).all(|w| w[1] > w[0]);
    ExpTowerReport { x, rows, first_overflow, monotone }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_iteration() {
        let r = exp_tower_demo(0.1, 1);
        assert!((r.rows[0].value.unwrap() - 1.1051709180756477).abs() < 1e-15);
    }

    #[test]
    fn tower_values() {
        assert_eq!(tower_power(2, 0.0), 1.0);
        assert_eq!(tower_power(0, 3.0), 1.0);
        assert!((tower_power(1, 2.0) - std::f64::consts::E.powi(2)).abs() < 1e-12);
        assert!((tower_power(2, 1.0) - std::f64::consts::E.exp()).abs() < 1e-12);
    }

    #[test]
    fn growth_and_overflow() {
        let r = exp_tower_demo(0.5, 6);
        assert!(r.monotone);
        assert_eq!(r.first_overflow, Some(5));
        for row in &r.rows {
            if let Some(v) = row.value {
                assert_eq!(v, row.direct);
            }
        }
    }
}
