//! Recurrent circuit-GNNs: every layer updates each vertex with a member of an
//! arity-indexed circuit family applied to (own label, neighbour labels).

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationRegistry;
use crate::builder::CircuitBuilder;
use crate::circuit::ExtendedCircuit;
use crate::exec::Exec;
use crate::graph::{GraphError, LabelledGraph};
use crate::recurrent::{HaltingSpec, RecurrentCircuit, RunError, MATCH_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GnnError {
    #[error("no halt within {budget} layers")]
    OuterBudget { budget: usize },
    #[error("vertex {vertex} did not halt within {budget} inner iterations at layer {layer}")]
    InnerNonHalting { vertex: usize, layer: usize, budget: u64 },
    #[error("family has no member of arity {arity}: {reason}")]
    Arity { arity: usize, reason: String },
    #[error("vertex {vertex} failed at layer {layer}: {message}")]
    Eval { vertex: usize, layer: usize, message: String },
    #[error("unknown activation {0}")]
    UnknownActivation(String),
    #[error("halting function failed: {0}")]
    Halting(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid GNN: {0}")]
    Invalid(String),
}

/// Update rule of one vertex in one layer, reading only its neighbours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum VertexOp {
    /// Keep the own label.
    Hold,
    /// Overwrite with a constant.
    Reset { value: f64 },
    /// Sum of the neighbours minus `q`.
    SumMinus { q: f64 },
    /// Product of the neighbours.
    Prod,
    /// `σ(Σ neighbours − q)`.
    Act { name: String, q: f64 },
}

impl VertexOp {
    fn circuit(&self, arity: usize) -> ExtendedCircuit {
        let mut b = CircuitBuilder::new();
        let ins: Vec<_> = (0..arity).map(|_| b.input()).collect();
        let nb = &ins[1.min(arity)..];
        let sum_minus = |b: &mut CircuitBuilder, q: f64| {
            let c = b.constant(-q);
            let mut p = nb.to_vec();
            p.push(c);
            b.add(&p)
        };
        let out = match self {
            VertexOp::Hold => ins[0],
            VertexOp::Reset { value } => b.constant(*value),
            VertexOp::SumMinus { q } => sum_minus(&mut b, *q),
            VertexOp::Prod if nb.is_empty() => b.constant(1.0),
            VertexOp::Prod => b.mul(nb),
            VertexOp::Act { name, q } => {
                let s = sum_minus(&mut b, *q);
                b.act(name, s)
            }
        };
        b.output(out);
        b.finish()
    }
}

/// Integer-keyed maps as JSON objects. The keys are read back as strings,
/// which the derived impl cannot do once the map sits inside a flattened
/// struct.
mod index_keys {
    use std::collections::BTreeMap;

    use serde::de::{DeserializeOwned, Error};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(m: &BTreeMap<usize, T>, s: S) -> Result<S::Ok, S::Error> {
        m.serialize(s)
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, T>, D::Error> {
        BTreeMap::<String, T>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad key {k:?}"))))
            .collect()
    }
}

/// Per-degree update table; vertices of unlisted degree use `default`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeDispatch {
    #[serde(with = "index_keys")]
    pub ops: BTreeMap<usize, VertexOp>,
    pub default: VertexOp,
}

impl DegreeDispatch {
    pub fn op(&self, degree: usize) -> &VertexOp {
        self.ops.get(&degree).unwrap_or(&self.default)
    }
}

/// A family member: a plain circuit or a recurrent one with one output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "circuit", rename_all = "kebab-case")]
pub enum Member {
    Plain(ExtendedCircuit),
    Recurrent(RecurrentCircuit),
}

impl Member {
    pub fn arity(&self) -> usize {
        match self {
            Member::Plain(c) => c.n(),
            Member::Recurrent(r) => r.n(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Member::Plain(c) => c.m(),
            Member::Recurrent(r) => r.m(),
        }
    }

    pub fn underlying(&self) -> &ExtendedCircuit {
        match self {
            Member::Plain(c) => c,
            Member::Recurrent(r) => &r.underlying,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "kebab-case")]
pub enum FamilyGenerator {
    /// Fixed members; other arities are an error.
    Explicit {
        #[serde(with = "index_keys")]
        members: BTreeMap<usize, Member>,
    },
    /// Own label plus the neighbour sum.
    Sum,
    /// Own label times the neighbour product.
    Product,
    /// `α·own + β·Σ neighbours + γ`.
    Affine { alpha: f64, beta: f64, gamma: f64 },
    Identity,
    /// Update chosen by the vertex degree `arity − 1`.
    DegreeDispatch(DegreeDispatch),
    /// Recurrent member: Fibonacci numbers driven by the own label, halting
    /// once `i ≥ own − 1` or `i ≥ cap`; the output adds `β·Σ neighbours`.
    InnerFibonacci { cap: u32, beta: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyTags {
    pub sign_free: bool,
    pub recurrent: bool,
    pub tail_symmetric: bool,
}

/// Arity-indexed circuit family with memoized members.
#[derive(Debug, Serialize, Deserialize)]
pub struct CircuitFamily {
    #[serde(flatten)]
    pub generator: FamilyGenerator,
    #[serde(default)]
    pub tags: FamilyTags,
    #[serde(skip)]
    cache: Mutex<HashMap<usize, Arc<Member>>>,
}

impl Clone for CircuitFamily {
    fn clone(&self) -> Self {
        CircuitFamily::new(self.generator.clone(), self.tags.clone())
    }
}

impl PartialEq for CircuitFamily {
    fn eq(&self, other: &Self) -> bool {
        self.generator == other.generator && self.tags == other.tags
    }
}

/// Evaluation shortcut equal to the member circuit.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Fast {
    Op(VertexOp),
    Affine { alpha: f64, beta: f64, gamma: f64 },
    Sum,
    Product,
}

impl CircuitFamily {
    pub fn new(generator: FamilyGenerator, tags: FamilyTags) -> Self {
        CircuitFamily { generator, tags, cache: Mutex::new(HashMap::new()) }
    }

    /// Family with tags derived from the template.
    pub fn template(generator: FamilyGenerator) -> Self {
        let tags = match &generator {
            FamilyGenerator::Explicit { members } => FamilyTags {
                sign_free: members.values().all(|m| m.underlying().is_sign_free()),
                recurrent: members.values().any(|m| matches!(m, Member::Recurrent(_))),
                tail_symmetric: false,
            },
            FamilyGenerator::DegreeDispatch(dd) => FamilyTags {
                sign_free: dd.ops.values().chain([&dd.default]).all(|op| !matches!(op, VertexOp::Act { name, .. } if name == "sign")),
                recurrent: false,
                tail_symmetric: true,
            },
            FamilyGenerator::InnerFibonacci { .. } => {
                FamilyTags { sign_free: false, recurrent: true, tail_symmetric: true }
            }
            _ => FamilyTags { sign_free: true, recurrent: false, tail_symmetric: true },
        };
        CircuitFamily::new(generator, tags)
    }

    pub(crate) fn fast(&self, arity: usize) -> Option<Fast> {
        match &self.generator {
            FamilyGenerator::Sum => Some(Fast::Sum),
            FamilyGenerator::Product => Some(Fast::Product),
            FamilyGenerator::Affine { alpha, beta, gamma } => {
                Some(Fast::Affine { alpha: *alpha, beta: *beta, gamma: *gamma })
            }
            FamilyGenerator::Identity => Some(Fast::Op(VertexOp::Hold)),
            FamilyGenerator::DegreeDispatch(dd) => Some(Fast::Op(dd.op(arity.checked_sub(1)?).clone())),
            _ => None,
        }
    }

    /// The member of the given arity, built once and then shared.
    pub fn member(&self, arity: usize) -> Result<Arc<Member>, GnnError> {
        if arity == 0 {
            return Err(GnnError::Arity { arity, reason: "members need the own label".into() });
        }
        if let Some(m) = self.cache.lock().expect("family cache poisoned").get(&arity) {
            return Ok(m.clone());
        }
        let m = Arc::new(self.build(arity)?);
        self.cache.lock().expect("family cache poisoned").insert(arity, m.clone());
        Ok(m)
    }

    /// Builds a member without touching the cache.
    pub fn build(&self, arity: usize) -> Result<Member, GnnError> {
        let m = match &self.generator {
            FamilyGenerator::Explicit { members } => members
                .get(&arity)
                .cloned()
                .ok_or_else(|| GnnError::Arity { arity, reason: "not in the explicit member table".into() })?,
            FamilyGenerator::Sum => {
                let mut b = CircuitBuilder::new();
                let ins: Vec<_> = (0..arity).map(|_| b.input()).collect();
                let s = b.add(&ins);
                b.output(s);
                Member::Plain(b.finish())
            }
            FamilyGenerator::Product => {
                let mut b = CircuitBuilder::new();
                let ins: Vec<_> = (0..arity).map(|_| b.input()).collect();
                let s = b.mul(&ins);
                b.output(s);
                Member::Plain(b.finish())
            }
            FamilyGenerator::Affine { alpha, beta, gamma } => {
                let mut b = CircuitBuilder::new();
                let ins: Vec<_> = (0..arity).map(|_| b.input()).collect();
                let mut terms = vec![b.scale(ins[0], *alpha)];
                if arity > 1 {
                    let s = b.add(&ins[1..]);
                    terms.push(b.scale(s, *beta));
                }
                terms.push(b.constant(*gamma));
                let s = b.add(&terms);
                b.output(s);
                Member::Plain(b.finish())
            }
            FamilyGenerator::Identity => Member::Plain(VertexOp::Hold.circuit(arity)),
            FamilyGenerator::DegreeDispatch(dd) => Member::Plain(dd.op(arity - 1).circuit(arity)),
            FamilyGenerator::InnerFibonacci { cap, beta } => {
                Member::Recurrent(crate::harness::fixtures::inner_fibonacci(arity, *cap, *beta))
            }
        };
        if m.arity() != arity || m.outputs() != 1 {
            return Err(GnnError::Arity { arity, reason: format!("member has {} inputs, {} outputs", m.arity(), m.outputs()) });
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub family: CircuitFamily,
    pub activation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GnnHalting {
    FixedLayer { k: usize },
    /// Fires when more than `bound` labels lie within 1e-9 of `target`.
    ThresholdCount { target: f64, bound: usize },
    /// Member of arity `|V| + 1` read on `(layer, labels sorted ascending)`.
    Family { family: CircuitFamily },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecCGnn {
    pub period: usize,
    pub layers: Vec<LayerSpec>,
    pub halting: GnnHalting,
    pub inner_budget: u64,
}

impl RecCGnn {
    pub fn new(layers: Vec<LayerSpec>, halting: GnnHalting, inner_budget: u64) -> Self {
        RecCGnn { period: layers.len(), layers, halting, inner_budget }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers.is_empty() || self.period != self.layers.len() {
            return Err(GnnError::Invalid(format!("period {} with {} layers", self.period, self.layers.len())));
        }
        let reg = ActivationRegistry::builtin();
        for l in &self.layers {
            if !reg.contains(&l.activation) {
                return Err(GnnError::UnknownActivation(l.activation.clone()));
            }
        }
        Ok(())
    }

    /// Layer `i` (1-based) uses `layers[(i − 1) mod d]`.
    pub fn layer(&self, i: usize) -> &LayerSpec {
        &self.layers[(i - 1) % self.period]
    }

    pub fn is_inner_recurrent(&self) -> bool {
        self.layers.iter().any(|l| l.family.tags.recurrent)
    }
}

/// One sum-aggregation AC-GNN layer, `σ(α·own + β·Σ neighbours + γ)`,
/// repeated `d` times per period.
pub fn ac_to_cgnn(alpha: f64, beta: f64, gamma: f64, sigma: &str, d: usize, halting: GnnHalting) -> RecCGnn {
    let layer = LayerSpec {
        family: CircuitFamily::template(FamilyGenerator::Affine { alpha, beta, gamma }),
        activation: sigma.to_string(),
    };
    RecCGnn::new(vec![layer; d], halting, crate::recurrent::DEFAULT_BUDGET)
}

pub fn hlt_eval_gnn(spec: &GnnHalting, layer: usize, values: &[f64]) -> Result<bool, GnnError> {
    match spec {
        GnnHalting::FixedLayer { k } => Ok(layer == *k),
        GnnHalting::ThresholdCount { target, bound } => {
            Ok(values.iter().filter(|v| (*v - target).abs() <= MATCH_TOLERANCE).count() > *bound)
        }
        GnnHalting::Family { family } => {
            let m = family.member(values.len() + 1)?;
            let Member::Plain(c) = &*m else {
                return Err(GnnError::Halting("halting member must be non-recurrent".into()));
            };
            let mut x = Vec::with_capacity(values.len() + 1);
            x.push(layer as f64);
            x.extend_from_slice(values);
            x[1..].sort_by(f64::total_cmp);
            let (out, _) = c.evaluate(&x, &[]).map_err(|e| GnnError::Halting(e.to_string()))?;
            Ok(out[0] > 0.5)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub outer_budget: usize,
    pub exec: Exec,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { outer_budget: 1000, exec: Exec::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnRun {
    pub graph: LabelledGraph,
    /// Number of layers applied; the halting function fired after the last.
    pub layers: usize,
}

/// Compressed adjacency with neighbours in ascending order.
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    fn new(g: &LabelledGraph) -> Self {
        let adj = g.adjacency();
        let mut offsets = Vec::with_capacity(g.n + 1);
        let mut targets = Vec::with_capacity(2 * g.edges.len());
        offsets.push(0);
        for l in adj {
            targets.extend(l);
            offsets.push(targets.len());
        }
        Csr { offsets, targets }
    }

    fn nbrs(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

enum Eval {
    Fast(Fast),
    Member(Arc<Member>),
}

fn eval_vertex(
    how: &Eval,
    reg: &ActivationRegistry,
    own: f64,
    nbrs: &[usize],
    h: &[f64],
    inner_budget: u64,
) -> Result<f64, String> {
    let nsum = || nbrs.iter().fold(0.0, |acc, &u| acc + h[u]);
    match how {
        Eval::Fast(f) => Ok(match f {
            Fast::Op(VertexOp::Hold) => own,
            Fast::Op(VertexOp::Reset { value }) => *value,
            Fast::Op(VertexOp::SumMinus { q }) => nsum() + -q,
            Fast::Op(VertexOp::Prod) => nbrs.iter().fold(1.0, |acc, &u| acc * h[u]),
            Fast::Op(VertexOp::Act { name, q }) => {
                let f = reg.get(name).ok_or_else(|| format!("unknown activation {name}"))?;
                f(nsum() + -q)
            }
            Fast::Sum => nbrs.iter().fold(own, |acc, &u| acc + h[u]),
            Fast::Product => nbrs.iter().fold(own, |acc, &u| acc * h[u]),
            Fast::Affine { alpha, beta, gamma } => {
                let mut acc = own * alpha;
                if !nbrs.is_empty() {
                    acc += nsum() * beta;
                }
                acc + gamma
            }
        }),
        Eval::Member(m) => {
            let mut x = Vec::with_capacity(nbrs.len() + 1);
            x.push(own);
            x.extend(nbrs.iter().map(|&u| h[u]));
            match &**m {
                Member::Plain(c) => c.evaluate_with(reg, &x, &[]).map(|(o, _)| o[0]).map_err(|e| e.to_string()),
                Member::Recurrent(r) => match r.run_with(reg, &x, inner_budget) {
                    Ok((o, _)) => Ok(o[0]),
                    Err(RunError::NonHalting { .. }) => Err("inner budget".into()),
                    Err(e) => Err(e.to_string()),
                },
            }
        }
    }
}

pub fn run_gnn(gnn: &RecCGnn, g: &LabelledGraph, opts: &RunOptions) -> Result<GnnRun, GnnError> {
    run_gnn_observed(gnn, g, opts, &mut |_, _| {})
}

/// Like [`run_gnn`], calling `observer(layer, labels)` after every layer.
pub fn run_gnn_observed(
    gnn: &RecCGnn,
    g: &LabelledGraph,
    opts: &RunOptions,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<GnnRun, GnnError> {
    gnn.validate()?;
    g.validate()?;
    let reg = ActivationRegistry::builtin();
    let csr = Csr::new(g);
    let mut arities: Vec<usize> = (0..g.n).map(|v| csr.nbrs(v).len() + 1).collect();
    arities.sort_unstable();
    arities.dedup();
    // index into `arities` for every vertex
    let slot: Vec<usize> =
        (0..g.n).map(|v| arities.binary_search(&(csr.nbrs(v).len() + 1)).expect("arity listed")).collect();

    // evaluators per layer spec, aligned with `arities`
    let mut plans: Vec<Option<Vec<Eval>>> = (0..gnn.period).map(|_| None).collect();
    let mut h = g.labels.clone();
    let mut next = vec![0.0; g.n];
    for layer in 1..=opts.outer_budget {
        let idx = (layer - 1) % gnn.period;
        let spec = &gnn.layers[idx];
        if plans[idx].is_none() {
            let plan = arities
                .iter()
                .map(|&k| match spec.family.fast(k) {
                    Some(f) => Ok(Eval::Fast(f)),
                    None => spec.family.member(k).map(Eval::Member),
                })
                .collect::<Result<Vec<_>, _>>()?;
            plans[idx] = Some(plan);
        }
        let plan = plans[idx].as_ref().expect("plan built");
        let sigma = match spec.activation.as_str() {
            "id" => None,
            name => Some(reg.get(name).ok_or_else(|| GnnError::UnknownActivation(name.into()))?),
        };
        let results: Vec<Result<f64, String>> = opts.exec.map_range(g.n, |v| {
            let nb = csr.nbrs(v);
            let y = eval_vertex(&plan[slot[v]], reg, h[v], nb, &h, gnn.inner_budget)?;
            let y = match sigma {
                Some(f) => f(y),
                None => y,
            };
            if y.is_finite() {
                Ok(y)
            } else {
                Err(format!("non-finite value {y}"))
            }
        });
        for (v, r) in results.into_iter().enumerate() {
            next[v] = r.map_err(|message| {
                if message == "inner budget" {
                    GnnError::InnerNonHalting { vertex: v, layer, budget: gnn.inner_budget }
                } else {
                    GnnError::Eval { vertex: v, layer, message }
                }
            })?;
        }
        std::mem::swap(&mut h, &mut next);
        observer(layer, &h);
        if hlt_eval_gnn(&gnn.halting, layer, &h)? {
            return Ok(GnnRun { graph: LabelledGraph { n: g.n, edges: g.edges.clone(), labels: h }, layers: layer });
        }
    }
    Err(GnnError::OuterBudget { budget: opts.outer_budget })
}

/// Wraps a plain member into a recurrent circuit that halts immediately.
pub fn one_shot(c: ExtendedCircuit) -> RecurrentCircuit {
    let rec_edges = c.inputs().iter().map(|&g| (g, g)).chain(c.aux_memory().iter().map(|&g| (g, g))).collect();
    RecurrentCircuit {
        initial_aux: vec![0.0; c.ell()],
        underlying: c,
        rec_edges,
        halting_gates: vec![],
        halting: HaltingSpec::AlwaysHalt,
        counter: None,
    }
}


impl CircuitFamily {
    /// Arities the family is defined on, up to `max_arity`.
    pub fn arities(&self, max_arity: usize) -> Vec<usize> {
        match &self.generator {
            FamilyGenerator::Explicit { members } => members.keys().copied().filter(|&k| k <= max_arity).collect(),
            _ => (1..=max_arity).collect(),
        }
    }

    /// Samples whether each member ignores the order of its neighbour
    /// arguments. Recurrent members are compared on small integer inputs
    /// where both runs halt within `inner_budget`.
    pub fn check_tail_symmetry(&self, max_arity: usize, trials: usize, seed: u64, inner_budget: u64) -> Result<(), String> {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for k in self.arities(max_arity) {
            let member = self.member(k).map_err(|e| e.to_string())?;
            match &*member {
                Member::Plain(c) => c
                    .check_tail_symmetric_sampled(trials, seed)
                    .map_err(|w| format!("arity {k}: permuting {:?} changes {:?} to {:?}", w.permutation, w.original, w.permuted))?,
                Member::Recurrent(r) => {
                    for _ in 0..trials {
                        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-3..=3) as f64).collect();
                        let mut px = x.clone();
                        px[1..].shuffle(&mut rng);
                        if let (Ok((a, _)), Ok((b, _))) = (r.run(&x, inner_budget), r.run(&px, inner_budget)) {
                            if !crate::circuit::approx_eq_slice(&a, &b, crate::circuit::TOLERANCE) {
                                return Err(format!("arity {k}: {x:?} gives {a:?}, {px:?} gives {b:?}"));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
