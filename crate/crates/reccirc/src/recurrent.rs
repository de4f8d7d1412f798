//! Recurrent circuits: iterate an extended circuit until a halting function fires.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationRegistry;
use crate::circuit::{
    EvalError, ExtendedCircuit, Gate, GateId, GateKind, ValidationReport, Violation, ViolationKind,
};

pub const DEFAULT_BUDGET: u64 = 10_000;

/// Tolerance used by threshold-count halting when matching the target value.
pub const MATCH_TOLERANCE: f64 = 1e-9;

/// When a recurrent circuit stops.
///
/// A circuit-backed halting function reads `(i, v_1, ..., v_p)` where `i` is
/// the iteration number and fires when its single output exceeds 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HaltingSpec {
    Circuit { circuit: ExtendedCircuit },
    /// Fires exactly at iteration `k`.
    FixedIteration { k: u64 },
    /// Fires when more than `bound` halting values lie within 1e-9 of `target`.
    ThresholdCount { target: f64, bound: usize },
    AlwaysHalt,
}

impl HaltingSpec {
    pub fn is_circuit_backed(&self) -> bool {
        matches!(self, HaltingSpec::Circuit { .. })
    }

    pub fn circuit(&self) -> Option<&ExtendedCircuit> {
        match self {
            HaltingSpec::Circuit { circuit } => Some(circuit),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum HaltingError {
    #[error("halting circuit expects {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("halting circuit must have exactly one output, has {0}")]
    Outputs(usize),
    #[error("halting circuit failed: {0}")]
    Eval(#[from] EvalError),
}

/// Evaluates a halting function at iteration `i` on the halting-gate values `v`.
pub fn halting_eval(spec: &HaltingSpec, i: u64, v: &[f64]) -> Result<bool, HaltingError> {
    match spec {
        HaltingSpec::Circuit { circuit } => {
            if circuit.m() != 1 {
                return Err(HaltingError::Outputs(circuit.m()));
            }
            if circuit.n() != v.len() + 1 {
                return Err(HaltingError::Arity { expected: circuit.n().saturating_sub(1), got: v.len() });
            }
            let mut x = Vec::with_capacity(v.len() + 1);
            x.push(i as f64);
            x.extend_from_slice(v);
            let (out, _) = circuit.evaluate(&x, &[])?;
            Ok(out[0] > 0.5)
        }
        HaltingSpec::FixedIteration { k } => Ok(i == *k),
        HaltingSpec::ThresholdCount { target, bound } => {
            let hits = v.iter().filter(|x| (*x - target).abs() <= MATCH_TOLERANCE).count();
            Ok(hits > *bound)
        }
        HaltingSpec::AlwaysHalt => Ok(true),
    }
}

/// An extended circuit with initial memory, one recurrent edge into every
/// memory gate, halting gates and a halting function.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCircuit {
    pub underlying: ExtendedCircuit,
    pub initial_aux: Vec<f64>,
    /// Memory gate -> gate whose value it takes at the next iteration.
    pub rec_edges: BTreeMap<GateId, GateId>,
    pub halting_gates: Vec<GateId>,
    pub halting: HaltingSpec,
    /// The iteration counter added by [`fold_iteration_counter`], if any.
    pub counter: Option<GateId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub inputs: Vec<f64>,
    pub aux: Vec<f64>,
    pub halting_values: Vec<f64>,
    pub halted: bool,
    pub outputs: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RunError {
    #[error("did not halt within {budget} iterations")]
    NonHalting { budget: u64, trace: RunTrace },
    #[error("evaluation failed at iteration {iteration}: {source}")]
    Eval { iteration: u64, source: EvalError },
    #[error("halting function failed at iteration {iteration}: {source}")]
    Halting { iteration: u64, source: HaltingError },
    #[error("input has length {got}, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("invalid recurrent circuit: {0}")]
    Invalid(String),
}

impl RecurrentCircuit {
    pub fn n(&self) -> usize {
        self.underlying.n()
    }

    pub fn m(&self) -> usize {
        self.underlying.m()
    }

    pub fn ell(&self) -> usize {
        self.underlying.ell()
    }

    pub fn p(&self) -> usize {
        self.halting_gates.len()
    }

    /// Memory gates in order: inputs, then auxiliary memory.
    pub fn memory_gates(&self) -> impl Iterator<Item = GateId> + '_ {
        self.underlying.inputs().iter().chain(self.underlying.aux_memory()).copied()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = self.underlying.validate();
        let size = self.underlying.size();
        let mut push = |kind, gate, message: String| report.violations.push(Violation { kind, gate, message });
        if self.initial_aux.len() != self.ell() {
            push(
                ViolationKind::InitialAux,
                None,
                format!("{} initial values for {} aux gates", self.initial_aux.len(), self.ell()),
            );
        }
        for g in self.memory_gates() {
            match self.rec_edges.get(&g) {
                None => push(ViolationKind::RecurrentEdges, Some(g), "memory gate without recurrent edge".into()),
                Some(&s) if s >= size => {
                    push(ViolationKind::RecurrentEdges, Some(g), format!("recurrent source {s} does not exist"))
                }
                _ => {}
            }
        }
        for (&g, _) in &self.rec_edges {
            if g >= size || !self.underlying.kind(g).is_memory() {
                push(ViolationKind::RecurrentEdges, Some(g), "recurrent edge into a non-memory gate".into());
            }
        }
        for &h in &self.halting_gates {
            if h >= size {
                push(ViolationKind::Halting, Some(h), "halting gate does not exist".into());
            }
        }
        if let Some(c) = self.halting.circuit() {
            let inner = c.validate();
            for v in inner.violations {
                push(ViolationKind::Halting, v.gate, format!("halting circuit: {v}"));
            }
            if c.m() != 1 {
                push(ViolationKind::Halting, None, format!("halting circuit has {} outputs", c.m()));
            }
            if c.n() != self.p() + 1 {
                push(
                    ViolationKind::Halting,
                    None,
                    format!("halting circuit has {} inputs for {} halting gates", c.n(), self.p()),
                );
            }
            if c.ell() != 0 {
                push(ViolationKind::Halting, None, "halting circuit has auxiliary memory".into());
            }
        }
        report
    }

    pub fn run(&self, x: &[f64], budget: u64) -> Result<(Vec<f64>, RunTrace), RunError> {
        self.run_with(ActivationRegistry::builtin(), x, budget)
    }

    /// Iterates from `(x, initial_aux)` until the halting function fires.
    ///
    /// Memory updates are simultaneous: every memory gate reads its source from
    /// the completed evaluation of the current iteration.
    pub fn run_with(
        &self,
        reg: &ActivationRegistry,
        x: &[f64],
        budget: u64,
    ) -> Result<(Vec<f64>, RunTrace), RunError> {
        if x.len() != self.n() {
            return Err(RunError::Arity { expected: self.n(), got: x.len() });
        }
        if self.initial_aux.len() != self.ell() {
            return Err(RunError::Invalid("initial aux length".into()));
        }
        let inputs_src = self.sources(self.underlying.inputs())?;
        let aux_src = self.sources(self.underlying.aux_memory())?;
        let mut cur_x = x.to_vec();
        let mut cur_a = self.initial_aux.clone();
        let mut values = Vec::new();
        let mut trace = RunTrace::default();
        for i in 1..=budget {
            self.underlying
                .eval_into(reg, &cur_x, &cur_a, &mut values)
                .map_err(|source| RunError::Eval { iteration: i, source })?;
            let hv: Vec<f64> = self.halting_gates.iter().map(|&h| values[h]).collect();
            let halted =
                halting_eval(&self.halting, i, &hv).map_err(|source| RunError::Halting { iteration: i, source })?;
            let outs: Vec<f64> = self.underlying.outputs().iter().map(|&o| values[o]).collect();
            trace.records.push(IterationRecord {
                iteration: i,
                inputs: cur_x.clone(),
                aux: cur_a.clone(),
                halting_values: hv,
                halted,
                outputs: outs.clone(),
            });
            if halted {
                return Ok((outs, trace));
            }
            for (slot, &s) in cur_x.iter_mut().zip(&inputs_src) {
                *slot = values[s];
            }
            for (slot, &s) in cur_a.iter_mut().zip(&aux_src) {
                *slot = values[s];
            }
        }
        Err(RunError::NonHalting { budget, trace })
    }

    fn sources(&self, gates: &[GateId]) -> Result<Vec<GateId>, RunError> {
        gates
            .iter()
            .map(|g| {
                self.rec_edges
                    .get(g)
                    .copied()
                    .filter(|&s| s < self.underlying.size())
                    .ok_or_else(|| RunError::Invalid(format!("memory gate {g} lacks a recurrent edge")))
            })
            .collect()
    }

    /// True when the halting function never looks at the iteration number, so
    /// the whole computation is determined by gate values alone.
    pub fn is_iteration_free(&self) -> bool {
        match &self.halting {
            HaltingSpec::Circuit { circuit } => {
                let i = circuit.inputs()[0];
                circuit.gates().iter().all(|g| !g.preds.contains(&i))
            }
            HaltingSpec::FixedIteration { .. } => false,
            HaltingSpec::ThresholdCount { .. } | HaltingSpec::AlwaysHalt => true,
        }
    }

    /// Balanced, level-homogeneous, and every halting gate and memory
    /// predecessor lies strictly deeper than the deepest activation level.
    pub fn is_predecessor_form(&self) -> bool {
        let c = &self.underlying;
        if c.order().is_none() || !c.is_balanced_dag() {
            return false;
        }
        let d = c.gate_depths();
        let mut tags: BTreeMap<usize, String> = BTreeMap::new();
        for (g, gate) in c.gates().iter().enumerate() {
            let tag = gate.kind.level_tag();
            match tags.get(&d[g]) {
                Some(t) if *t != tag => return false,
                Some(_) => {}
                None => {
                    tags.insert(d[g], tag);
                }
            }
        }
        let last_act = c
            .gates()
            .iter()
            .enumerate()
            .filter(|(_, g)| matches!(g.kind, GateKind::Activation(_)))
            .map(|(i, _)| d[i])
            .max();
        let Some(last) = last_act else { return true };
        self.halting_gates.iter().chain(self.rec_edges.values()).all(|&g| d[g] > last)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum FoldError {
    #[error("only circuit-backed halting functions can be folded")]
    NotCircuitBacked,
}

/// Moves the iteration number into the circuit.
///
/// Adds an auxiliary counter `c` starting at 1 with `c <- c + 1`, appends `c`
/// to the halting gates, and rewires the halting circuit to read the counter
/// wherever it read `i`. Input 0 of the halting circuit stays but is unused.
pub fn fold_iteration_counter(rec: &RecurrentCircuit) -> Result<RecurrentCircuit, FoldError> {
    let HaltingSpec::Circuit { circuit: h } = &rec.halting else {
        return Err(FoldError::NotCircuitBacked);
    };
    let u = &rec.underlying;
    let mut gates = u.gates().to_vec();
    let c = gates.len();
    gates.push(Gate { kind: GateKind::AuxMemory(u.ell()), preds: vec![] });
    gates.push(Gate { kind: GateKind::Constant(1.0), preds: vec![] });
    gates.push(Gate { kind: GateKind::Add, preds: vec![c, c + 1] });
    let mut aux = u.aux_memory().to_vec();
    aux.push(c);
    let underlying = ExtendedCircuit::from_parts(gates, u.inputs().to_vec(), aux, u.outputs().to_vec());

    let old_i = h.inputs()[0];
    let mut hg = h.gates().to_vec();
    let new_in = hg.len();
    hg.push(Gate { kind: GateKind::Input(h.n()), preds: vec![] });
    for gate in hg.iter_mut() {
        for p in gate.preds.iter_mut() {
            if *p == old_i {
                *p = new_in;
            }
        }
    }
    let mut hin = h.inputs().to_vec();
    hin.push(new_in);
    let halting = ExtendedCircuit::from_parts(hg, hin, vec![], h.outputs().to_vec());

    let mut initial_aux = rec.initial_aux.clone();
    initial_aux.push(1.0);
    let mut rec_edges = rec.rec_edges.clone();
    rec_edges.insert(c, c + 2);
    let mut halting_gates = rec.halting_gates.clone();
    halting_gates.push(c);
    Ok(RecurrentCircuit {
        underlying,
        initial_aux,
        rec_edges,
        halting_gates,
        halting: HaltingSpec::Circuit { circuit: halting },
        counter: Some(c),
    })
}

// ---- JSON: the circuit object extended with the recurrent fields ----

#[derive(Serialize, Deserialize)]
struct RecExtras {
    initial_aux: Vec<f64>,
    rec_edges: BTreeMap<GateId, GateId>,
    halting_gates: Vec<GateId>,
    halting: HaltingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counter: Option<GateId>,
}

const EXTRA_KEYS: [&str; 5] = ["initial_aux", "rec_edges", "halting_gates", "halting", "counter"];

impl Serialize for RecurrentCircuit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let mut base = serde_json::to_value(&self.underlying).map_err(S::Error::custom)?;
        let extras = serde_json::to_value(RecExtras {
            initial_aux: self.initial_aux.clone(),
            rec_edges: self.rec_edges.clone(),
            halting_gates: self.halting_gates.clone(),
            halting: self.halting.clone(),
            counter: self.counter,
        })
        .map_err(S::Error::custom)?;
        if let (Some(obj), serde_json::Value::Object(ex)) = (base.as_object_mut(), extras) {
            obj.extend(ex);
        }
        base.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RecurrentCircuit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let serde_json::Value::Object(mut obj) = serde_json::Value::deserialize(d)? else {
            return Err(D::Error::custom("recurrent circuit must be a JSON object"));
        };
        let mut extras = serde_json::Map::new();
        for k in EXTRA_KEYS {
            if let Some(v) = obj.remove(k) {
                extras.insert(k.to_string(), v);
            }
        }
        let underlying: ExtendedCircuit =
            serde_json::from_value(serde_json::Value::Object(obj)).map_err(D::Error::custom)?;
        let ex: RecExtras = serde_json::from_value(serde_json::Value::Object(extras)).map_err(D::Error::custom)?;
        Ok(RecurrentCircuit {
            underlying,
            initial_aux: ex.initial_aux,
            rec_edges: ex.rec_edges,
            halting_gates: ex.halting_gates,
            halting: ex.halting,
            counter: ex.counter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixtures;

    #[test]
    fn fibonacci_runs() {
        let fib = fixtures::fibonacci();
        assert!(fib.validate().is_ok(), "{:?}", fib.validate());
        let (out, trace) = fib.run(&[7.0], DEFAULT_BUDGET).unwrap();
        assert_eq!(out, vec![13.0]);
        assert_eq!(trace.iterations(), 6);
        assert!(trace.records.last().unwrap().halted);
        assert_eq!(trace.records[0].iteration, 1);
    }

    #[test]
    fn fibonacci_one_step_probe() {
        let fib = fixtures::fibonacci();
        let (out, t) = fib.underlying.evaluate(&[5.0], &[1.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0]);
        let probe: Vec<f64> = fib.memory_gates().map(|g| t.value(fib.rec_edges[&g])).collect();
        assert_eq!(probe, vec![5.0, 1.0, 1.0]);
    }

    #[test]
    fn fibonacci_halting_circuit_at_four() {
        let fib = fixtures::fibonacci();
        assert!(halting_eval(&fib.halting, 4, &[5.0]).unwrap());
        assert!(!halting_eval(&fib.halting, 3, &[5.0]).unwrap());
    }

    #[test]
    fn builtin_halting() {
        assert!(!halting_eval(&HaltingSpec::FixedIteration { k: 3 }, 2, &[]).unwrap());
        assert!(halting_eval(&HaltingSpec::FixedIteration { k: 3 }, 3, &[]).unwrap());
        let tc = HaltingSpec::ThresholdCount { target: 2.0, bound: 5 };
        assert!(!halting_eval(&tc, 1, &[1.0; 6]).unwrap());
        let tc = HaltingSpec::ThresholdCount { target: 2.0, bound: 4 };
        assert!(halting_eval(&tc, 1, &[2.0, 2.0, 2.0, 2.0, 2.0, 1.0]).unwrap());
        assert!(halting_eval(&HaltingSpec::AlwaysHalt, 1, &[]).unwrap());
    }

    #[test]
    fn halting_arity_mismatch() {
        let fib = fixtures::fibonacci();
        assert!(matches!(halting_eval(&fib.halting, 1, &[]), Err(HaltingError::Arity { .. })));
    }

    #[test]
    fn decrement_halts_at_three() {
        let (out, trace) = fixtures::decrement(3).run(&[10.0], 100).unwrap();
        assert_eq!(trace.iterations(), 3);
        assert_eq!(out, vec![13.0]);
        let aux: Vec<f64> = trace.records.iter().map(|r| r.aux[0]).collect();
        assert_eq!(aux, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn non_halting_budget() {
        let err = fixtures::never_halts().run(&[0.0], 25).unwrap_err();
        match err {
            RunError::NonHalting { budget, trace } => {
                assert_eq!(budget, 25);
                assert_eq!(trace.records.len(), 25);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn fold_preserves_fibonacci() {
        let fib = fixtures::fibonacci();
        let folded = fold_iteration_counter(&fib).unwrap();
        assert!(folded.validate().is_ok(), "{:?}", folded.validate());
        assert_eq!(folded.ell(), fib.ell() + 1);
        assert!(folded.is_iteration_free());
        assert!(!fib.is_iteration_free());
        for x in 2..=10 {
            let (a, ta) = fib.run(&[x as f64], 100).unwrap();
            let (b, tb) = folded.run(&[x as f64], 100).unwrap();
            assert_eq!(a, b);
            assert_eq!(ta.iterations(), tb.iterations());
        }
    }

    #[test]
    fn fold_requires_circuit() {
        let r = fixtures::times_two();
        assert_eq!(fold_iteration_counter(&r), Err(FoldError::NotCircuitBacked));
    }

    #[test]
    fn json_round_trip() {
        let fib = fold_iteration_counter(&fixtures::fibonacci()).unwrap();
        let s = serde_json::to_string(&fib).unwrap();
        let back: RecurrentCircuit = serde_json::from_str(&s).unwrap();
        assert_eq!(back, fib);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v.get("gates").is_some() && v.get("rec_edges").is_some());
        let t = serde_json::to_string(&fixtures::plus_one()).unwrap();
        assert!(t.contains("\"fixed-iteration\""));
    }

    #[test]
    fn validate_flags_missing_edge() {
        let mut fib = fixtures::fibonacci();
        fib.rec_edges.remove(&1);
        assert!(fib.validate().has(ViolationKind::RecurrentEdges));
        let mut fib = fixtures::fibonacci();
        fib.initial_aux.pop();
        assert!(fib.validate().has(ViolationKind::InitialAux));
    }

    #[test]
    fn predecessor_form_examples() {
        assert!(fixtures::fibonacci().is_predecessor_form());
        let mut b = crate::builder::CircuitBuilder::new();
        let x = b.input();
        let y = b.input();
        let s = b.add(&[x, y]);
        let p = b.mul(&[x, y]);
        let t = b.add(&[s, p]);
        b.output(t);
        let mixed = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: BTreeMap::from([(x, x), (y, y)]),
            halting_gates: vec![],
            halting: HaltingSpec::AlwaysHalt,
            counter: None,
        };
        assert!(!mixed.is_predecessor_form());

        let mut b = crate::builder::CircuitBuilder::new();
        let x = b.input();
        let s = b.sign(x);
        let pad = b.add(&[s]);
        b.output(pad);
        let shallow = RecurrentCircuit {
            underlying: b.finish(),
            initial_aux: vec![],
            rec_edges: BTreeMap::from([(x, pad)]),
            halting_gates: vec![x],
            halting: HaltingSpec::AlwaysHalt,
            counter: None,
        };
        assert!(!shallow.is_predecessor_form());
        let mut deep = shallow.clone();
        deep.halting_gates = vec![pad];
        assert!(deep.is_predecessor_form());
    }
}
