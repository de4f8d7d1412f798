//! Extended arithmetic circuits: gates, validation, evaluation and structural analyses.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationRegistry;

pub type GateId = usize;

/// Relative tolerance used when comparing circuit outputs.
pub const TOLERANCE: f64 = 1e-9;

pub fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = 1f64.max(a.abs()).max(b.abs());
    (a - b).abs() <= tol * scale
}

pub fn approx_eq_slice(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| approx_eq(*x, *y, tol))
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateKind {
    Input(usize),
    AuxMemory(usize),
    Constant(f64),
    Add,
    Mul,
    Activation(String),
    Output(usize),
}

impl GateKind {
    pub fn is_source(&self) -> bool {
        matches!(self, GateKind::Input(_) | GateKind::AuxMemory(_) | GateKind::Constant(_))
    }

    pub fn is_memory(&self) -> bool {
        matches!(self, GateKind::Input(_) | GateKind::AuxMemory(_))
    }

    /// Coarse type used for level homogeneity: all sources share one tag.
    pub fn level_tag(&self) -> String {
        match self {
            GateKind::Input(_) | GateKind::AuxMemory(_) | GateKind::Constant(_) => "source".into(),
            GateKind::Add => "add".into(),
            GateKind::Mul => "mul".into(),
            GateKind::Activation(name) => format!("act:{name}"),
            GateKind::Output(_) => "output".into(),
        }
    }

    fn json_name(&self) -> &'static str {
        match self {
            GateKind::Input(_) => "input",
            GateKind::AuxMemory(_) => "aux",
            GateKind::Constant(_) => "const",
            GateKind::Add => "add",
            GateKind::Mul => "mul",
            GateKind::Activation(_) => "activation",
            GateKind::Output(_) => "output",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub preds: Vec<GateId>,
}

/// A DAG of gates with ordered input, auxiliary-memory and output lists.
///
/// Gates are addressed by dense ids in declaration order. A topological order is
/// computed once at construction, so the value is cheap to evaluate repeatedly.
#[derive(Clone)]
pub struct ExtendedCircuit {
    gates: Vec<Gate>,
    inputs: Vec<GateId>,
    aux_memory: Vec<GateId>,
    outputs: Vec<GateId>,
    order: Option<Arc<[GateId]>>,
}

impl PartialEq for ExtendedCircuit {
    fn eq(&self, other: &Self) -> bool {
        self.gates == other.gates
            && self.inputs == other.inputs
            && self.aux_memory == other.aux_memory
            && self.outputs == other.outputs
    }
}

impl fmt::Debug for ExtendedCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExtendedCircuit")
            .field("gates", &self.gates)
            .field("inputs", &self.inputs)
            .field("aux_memory", &self.aux_memory)
            .field("outputs", &self.outputs)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    Cycle,
    OutputIndegree,
    OutputOutdegree,
    ActivationIndegree,
    SourceIndegree,
    EmptyFanIn,
    DuplicateEdge,
    DanglingPredecessor,
    RoleList,
    NonFiniteConstant,
    RecurrentEdges,
    Halting,
    InitialAux,
}

impl ViolationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ViolationKind::Cycle => "cycle",
            ViolationKind::OutputIndegree => "output indegree",
            ViolationKind::OutputOutdegree => "output outdegree",
            ViolationKind::ActivationIndegree => "activation indegree",
            ViolationKind::SourceIndegree => "source indegree",
            ViolationKind::EmptyFanIn => "empty fan-in",
            ViolationKind::DuplicateEdge => "duplicate edge",
            ViolationKind::DanglingPredecessor => "dangling predecessor",
            ViolationKind::RoleList => "role list",
            ViolationKind::NonFiniteConstant => "non-finite constant",
            ViolationKind::RecurrentEdges => "recurrent edges",
            ViolationKind::Halting => "halting",
            ViolationKind::InitialAux => "initial aux",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub gate: Option<GateId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gate {
            Some(g) => write!(f, "{} at gate {}: {}", self.kind.name(), g, self.message),
            None => write!(f, "{}: {}", self.kind.name(), self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Values of every gate after one evaluation pass, indexed by gate id.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTrace {
    pub gate_values: Vec<f64>,
}

impl EvalTrace {
    pub fn value(&self, g: GateId) -> f64 {
        self.gate_values[g]
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("gate {gate} uses unregistered activation `{name}`")]
    UnknownActivation { gate: GateId, name: String },
    #[error("gate {gate} produced non-finite value {value}")]
    NonFinite { gate: GateId, value: f64 },
    #[error("circuit is not a valid DAG")]
    Invalid,
}

/// A counterexample found while sampling for symmetry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryWitness {
    pub input: Vec<f64>,
    pub aux: Vec<f64>,
    pub permutation: Vec<usize>,
    pub original: Vec<f64>,
    pub permuted: Vec<f64>,
}

impl ExtendedCircuit {
    /// Assembles a circuit without validating it; call [`ExtendedCircuit::validate`].
    pub fn from_parts(
        gates: Vec<Gate>,
        inputs: Vec<GateId>,
        aux_memory: Vec<GateId>,
        outputs: Vec<GateId>,
    ) -> Self {
        let order = topological_order(&gates).map(Arc::from);
        ExtendedCircuit { gates, inputs, aux_memory, outputs, order }
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn gate(&self, g: GateId) -> &Gate {
        &self.gates[g]
    }

    pub fn kind(&self, g: GateId) -> &GateKind {
        &self.gates[g].kind
    }

    pub fn preds(&self, g: GateId) -> &[GateId] {
        &self.gates[g].preds
    }

    pub fn inputs(&self) -> &[GateId] {
        &self.inputs
    }

    pub fn aux_memory(&self) -> &[GateId] {
        &self.aux_memory
    }

    pub fn outputs(&self) -> &[GateId] {
        &self.outputs
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn ell(&self) -> usize {
        self.aux_memory.len()
    }

    pub fn m(&self) -> usize {
        self.outputs.len()
    }

    pub fn size(&self) -> usize {
        self.gates.len()
    }

    /// Topological order, or `None` if the gate graph has a cycle or dangling ids.
    pub fn order(&self) -> Option<&[GateId]> {
        self.order.as_deref()
    }

    pub fn activation_names(&self) -> BTreeSet<String> {
        self.gates
            .iter()
            .filter_map(|g| match &g.kind {
                GateKind::Activation(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn count_activation(&self, name: &str) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(&g.kind, GateKind::Activation(n) if n == name))
            .count()
    }

    pub fn is_sign_free(&self) -> bool {
        self.count_activation("sign") == 0
    }

    pub fn successors(&self) -> Vec<Vec<GateId>> {
        let mut succ = vec![Vec::new(); self.gates.len()];
        for (g, gate) in self.gates.iter().enumerate() {
            for &p in &gate.preds {
                if p < succ.len() {
                    succ[p].push(g);
                }
            }
        }
        succ
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.gates.len();
        let mut push = |kind: ViolationKind, gate: Option<GateId>, message: String| {
            v.push(Violation { kind, gate, message })
        };
        let mut outdeg = vec![0usize; n];
        let mut dangling = false;
        for (g, gate) in self.gates.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &p in &gate.preds {
                if p >= n {
                    dangling = true;
                    push(ViolationKind::DanglingPredecessor, Some(g), format!("predecessor {p} does not exist"));
                    continue;
                }
                outdeg[p] += 1;
                if !seen.insert(p) {
                    push(ViolationKind::DuplicateEdge, Some(g), format!("edge from {p} appears twice"));
                }
            }
            let k = gate.preds.len();
            match &gate.kind {
                GateKind::Input(_) | GateKind::AuxMemory(_) => {
                    if k != 0 {
                        push(ViolationKind::SourceIndegree, Some(g), format!("memory gate has {k} predecessors"));
                    }
                }
                GateKind::Constant(c) => {
                    if k != 0 {
                        push(ViolationKind::SourceIndegree, Some(g), format!("constant has {k} predecessors"));
                    }
                    if !c.is_finite() {
                        push(ViolationKind::NonFiniteConstant, Some(g), format!("constant {c}"));
                    }
                }
                GateKind::Add | GateKind::Mul => {
                    if k == 0 {
                        push(ViolationKind::EmptyFanIn, Some(g), "add/mul gate without predecessors".into());
                    }
                }
                GateKind::Activation(_) => {
                    if k != 1 {
                        push(ViolationKind::ActivationIndegree, Some(g), format!("activation has {k} predecessors"));
                    }
                }
                GateKind::Output(_) => {
                    if k != 1 {
                        push(ViolationKind::OutputIndegree, Some(g), format!("output has {k} predecessors"));
                    }
                }
            }
        }
        for (g, gate) in self.gates.iter().enumerate() {
            if matches!(gate.kind, GateKind::Output(_)) && outdeg[g] > 0 {
                push(ViolationKind::OutputOutdegree, Some(g), format!("output feeds {} gates", outdeg[g]));
            }
        }
        if self.order.is_none() && !dangling {
            let g = cycle_member(&self.gates);
            push(ViolationKind::Cycle, g, "gate graph is not acyclic".into());
        }
        // role lists
        let mut listed = vec![false; n];
        let lists: [(&str, &[GateId]); 3] =
            [("inputs", &self.inputs), ("aux_memory", &self.aux_memory), ("outputs", &self.outputs)];
        for (name, list) in lists {
            for (i, &g) in list.iter().enumerate() {
                if g >= n {
                    push(ViolationKind::RoleList, None, format!("{name}[{i}] = {g} does not exist"));
                    continue;
                }
                if listed[g] {
                    push(ViolationKind::RoleList, Some(g), format!("gate listed twice ({name})"));
                }
                listed[g] = true;
                let ok = match (name, &self.gates[g].kind) {
                    ("inputs", GateKind::Input(j)) => *j == i,
                    ("aux_memory", GateKind::AuxMemory(j)) => *j == i,
                    ("outputs", GateKind::Output(j)) => *j == i,
                    _ => false,
                };
                if !ok {
                    push(ViolationKind::RoleList, Some(g), format!("{name}[{i}] has kind {:?}", self.gates[g].kind));
                }
            }
        }
        for (g, gate) in self.gates.iter().enumerate() {
            let needs = matches!(gate.kind, GateKind::Input(_) | GateKind::AuxMemory(_) | GateKind::Output(_));
            if needs && !listed[g] {
                push(ViolationKind::RoleList, Some(g), "gate missing from its role list".into());
            }
        }
        ValidationReport { violations: v }
    }

    /// Evaluates with the builtin activation registry.
    pub fn evaluate(&self, x: &[f64], a: &[f64]) -> Result<(Vec<f64>, EvalTrace), EvalError> {
        self.evaluate_with(ActivationRegistry::builtin(), x, a)
    }

    pub fn evaluate_with(
        &self,
        reg: &ActivationRegistry,
        x: &[f64],
        a: &[f64],
    ) -> Result<(Vec<f64>, EvalTrace), EvalError> {
        let mut values = Vec::new();
        self.eval_into(reg, x, a, &mut values)?;
        let outs = self.outputs.iter().map(|&o| values[o]).collect();
        Ok((outs, EvalTrace { gate_values: values }))
    }

    /// Evaluates into a caller-owned buffer, which ends up holding every gate value.
    pub fn eval_into(
        &self,
        reg: &ActivationRegistry,
        x: &[f64],
        a: &[f64],
        values: &mut Vec<f64>,
    ) -> Result<(), EvalError> {
        if x.len() != self.inputs.len() {
            return Err(EvalError::LengthMismatch { what: "input", expected: self.inputs.len(), got: x.len() });
        }
        if a.len() != self.aux_memory.len() {
            return Err(EvalError::LengthMismatch {
                what: "auxiliary memory",
                expected: self.aux_memory.len(),
                got: a.len(),
            });
        }
        let order = self.order.as_ref().ok_or(EvalError::Invalid)?;
        values.clear();
        values.resize(self.gates.len(), 0.0);
        for &g in order.iter() {
            let gate = &self.gates[g];
            let v = match &gate.kind {
                GateKind::Input(i) => *x.get(*i).ok_or(EvalError::Invalid)?,
                GateKind::AuxMemory(i) => *a.get(*i).ok_or(EvalError::Invalid)?,
                GateKind::Constant(c) => *c,
                GateKind::Add => gate.preds.iter().map(|&p| values[p]).sum(),
                GateKind::Mul => gate.preds.iter().map(|&p| values[p]).product(),
                GateKind::Activation(name) => {
                    let f = reg
                        .get(name)
                        .ok_or_else(|| EvalError::UnknownActivation { gate: g, name: name.clone() })?;
                    f(values[*gate.preds.first().ok_or(EvalError::Invalid)?])
                }
                GateKind::Output(_) => values[*gate.preds.first().ok_or(EvalError::Invalid)?],
            };
            if !v.is_finite() {
                return Err(EvalError::NonFinite { gate: g, value: v });
            }
            values[g] = v;
        }
        Ok(())
    }

    /// Longest path from any source to each gate.
    ///
    /// # Panics
    /// If the circuit is cyclic.
    pub fn gate_depths(&self) -> Vec<usize> {
        let order = self.order.as_ref().expect("gate_depths on a cyclic circuit");
        let mut d = vec![0usize; self.gates.len()];
        for &g in order.iter() {
            d[g] = self.gates[g].preds.iter().map(|&p| d[p] + 1).max().unwrap_or(0);
        }
        d
    }

    pub fn gate_depth(&self, g: GateId) -> usize {
        self.gate_depths()[g]
    }

    /// Longest directed path between any two gates.
    pub fn depth(&self) -> usize {
        self.gate_depths().into_iter().max().unwrap_or(0)
    }

    pub fn is_balanced_dag(&self) -> bool {
        let d = self.gate_depths();
        self.gates.iter().enumerate().all(|(g, gate)| gate.preds.iter().all(|&p| d[p] + 1 == d[g]))
    }

    /// Inserts one-predecessor `Add` pads on every edge that skips levels.
    ///
    /// Existing gate ids are kept; pads are appended. Pads hanging off the same
    /// predecessor are shared, so balancing twice adds nothing.
    pub fn balance(&self) -> ExtendedCircuit {
        let d = self.gate_depths();
        let mut gates = self.gates.clone();
        let mut chains: HashMap<GateId, Vec<GateId>> = HashMap::new();
        for g in 0..self.gates.len() {
            let preds = self.gates[g].preds.clone();
            let mut rewired = Vec::with_capacity(preds.len());
            for p in preds {
                let gap = d[g] - 1 - d[p];
                if gap == 0 {
                    rewired.push(p);
                    continue;
                }
                let chain = chains.entry(p).or_default();
                while chain.len() < gap {
                    let prev = chain.last().copied().unwrap_or(p);
                    gates.push(Gate { kind: GateKind::Add, preds: vec![prev] });
                    chain.push(gates.len() - 1);
                }
                rewired.push(chain[gap - 1]);
            }
            gates[g].preds = rewired;
        }
        ExtendedCircuit::from_parts(gates, self.inputs.clone(), self.aux_memory.clone(), self.outputs.clone())
    }

    pub fn check_symmetric_sampled(&self, trials: usize, seed: u64) -> Result<(), SymmetryWitness> {
        self.check_permutations(trials, seed, 0)
    }

    pub fn check_tail_symmetric_sampled(&self, trials: usize, seed: u64) -> Result<(), SymmetryWitness> {
        self.check_permutations(trials, seed, 1)
    }

    fn check_permutations(&self, trials: usize, seed: u64, fixed: usize) -> Result<(), SymmetryWitness> {
        let n = self.n();
        if n < fixed + 2 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aux: Vec<f64> = (0..self.ell()).map(|_| rng.random_range(-3.0..3.0)).collect();
        for _ in 0..trials {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm[fixed..].shuffle(&mut rng);
            let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let (Ok((o1, _)), Ok((o2, _))) = (self.evaluate(&x, &aux), self.evaluate(&px, &aux)) else {
                continue;
            };
            if !approx_eq_slice(&o1, &o2, TOLERANCE) {
                return Err(SymmetryWitness { input: x, aux, permutation: perm, original: o1, permuted: o2 });
            }
        }
        Ok(())
    }
}

fn topological_order(gates: &[Gate]) -> Option<Vec<GateId>> {
    let n = gates.len();
    if gates.iter().enumerate().all(|(g, gate)| gate.preds.iter().all(|&p| p < g)) {
        return Some((0..n).collect());
    }
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for (g, gate) in gates.iter().enumerate() {
        for &p in &gate.preds {
            if p >= n {
                return None;
            }
            indeg[g] += 1;
            succ[p].push(g);
        }
    }
    let mut stack: Vec<GateId> = (0..n).rev().filter(|&g| indeg[g] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(g) = stack.pop() {
        order.push(g);
        for &s in succ[g].iter().rev() {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                stack.push(s);
            }
        }
    }
    (order.len() == n).then_some(order)
}

fn cycle_member(gates: &[Gate]) -> Option<GateId> {
    // Kahn leftovers: any gate never released lies on or behind a cycle.
    let n = gates.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for (g, gate) in gates.iter().enumerate() {
        for &p in gate.preds.iter().filter(|&&p| p < n) {
            indeg[g] += 1;
            succ[p].push(g);
        }
    }
    let mut stack: Vec<GateId> = (0..n).filter(|&g| indeg[g] == 0).collect();
    while let Some(g) = stack.pop() {
        for &s in &succ[g] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                stack.push(s);
            }
        }
    }
    (0..n).find(|&g| indeg[g] > 0)
}

// ---- JSON ----

#[derive(Serialize, Deserialize)]
struct RawGate {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    preds: Vec<GateId>,
}

#[derive(Serialize, Deserialize)]
struct RawCircuit {
    gates: Vec<RawGate>,
    inputs: Vec<GateId>,
    aux_memory: Vec<GateId>,
    outputs: Vec<GateId>,
}

/// Formats a double so that parsing the string gives back the same bits.
pub fn real_to_string(v: f64) -> String {
    format!("{v:?}")
}

pub fn real_from_str(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("bad real `{s}`: {e}"))
}

impl Serialize for ExtendedCircuit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let gates = self
            .gates
            .iter()
            .map(|g| RawGate {
                kind: g.kind.json_name().to_string(),
                value: match g.kind {
                    GateKind::Constant(c) => Some(real_to_string(c)),
                    _ => None,
                },
                activation: match &g.kind {
                    GateKind::Activation(n) => Some(n.clone()),
                    _ => None,
                },
                preds: g.preds.clone(),
            })
            .collect();
        RawCircuit {
            gates,
            inputs: self.inputs.clone(),
            aux_memory: self.aux_memory.clone(),
            outputs: self.outputs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExtendedCircuit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawCircuit::deserialize(d)?;
        let position = |list: &[GateId], g: GateId| list.iter().position(|&x| x == g);
        let mut gates = Vec::with_capacity(raw.gates.len());
        for (g, rg) in raw.gates.into_iter().enumerate() {
            let missing = |role: &str| D::Error::custom(format!("gate {g} of kind {role} is not listed in its role list"));
            let kind = match rg.kind.as_str() {
                "input" => GateKind::Input(position(&raw.inputs, g).ok_or_else(|| missing("input"))?),
                "aux" => GateKind::AuxMemory(position(&raw.aux_memory, g).ok_or_else(|| missing("aux"))?),
                "output" => GateKind::Output(position(&raw.outputs, g).ok_or_else(|| missing("output"))?),
                "const" => {
                    let s = rg.value.ok_or_else(|| D::Error::custom(format!("constant gate {g} lacks a value")))?;
                    GateKind::Constant(real_from_str(&s).map_err(D::Error::custom)?)
                }
                "add" => GateKind::Add,
                "mul" => GateKind::Mul,
                "activation" => GateKind::Activation(
                    rg.activation.ok_or_else(|| D::Error::custom(format!("activation gate {g} lacks a name")))?,
                ),
                other => return Err(D::Error::custom(format!("unknown gate kind `{other}`"))),
            };
            gates.push(Gate { kind, preds: rg.preds });
        }
        Ok(ExtendedCircuit::from_parts(gates, raw.inputs, raw.aux_memory, raw.outputs))
    }
}
