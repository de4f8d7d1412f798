//! Differential tests: generate a source, compile it, run both sides and
//! compare.
//!
//! Each trial draws from its own RNG stream, so a single trial can be
//! replayed from `(seed, trial)` alone and trials may run in parallel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::circuit::{approx_eq_slice, TOLERANCE};
use crate::compile::{
    compile_circuit_to_outer_gnn, compile_gnn_full_to_circuit, compile_gnn_inner_to_circuit,
    compile_gnn_outer_to_circuit, compile_symmetric_circuit_to_inner_gnn, ActivationMode,
};
use crate::encoding::instantiate_encoding;
use crate::exec::Exec;
use crate::gadgets::compose_recurrent;
use crate::gnn::{run_gnn, RecCGnn, RunOptions};
use crate::graph::{bipartite_encode, encode_graph, LabelledGraph};
use crate::recurrent::RecurrentCircuit;

use super::gen::{
    gen_gnn_instance, gen_instance, gen_predecessor_form, gen_random_circuit, gen_symmetric_template, trial_rng,
    well_behaved, CircuitConstraints, GnnConstraints,
};
use super::shrink::{circuit_deletions, shrink, vertex_deletions};

/// Which compiler a difftest exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffKind {
    /// Composition of two recurrent circuits.
    Thm3,
    /// Outer-recurrent GNN to circuit.
    Thm4,
    /// Inner-recurrent GNN to circuit.
    Thm5,
    /// GNN with both recurrences to circuit.
    Cor1,
    /// Circuit to outer-recurrent GNN, activations inside vertex updates.
    Thm6,
    /// Circuit in predecessor form to GNN with global activation layers.
    Thm7,
    /// Symmetric circuit to inner-recurrent GNN on a bipartite graph.
    Thm8,
}

impl DiffKind {
    pub const ALL: [DiffKind; 7] =
        [DiffKind::Thm3, DiffKind::Thm4, DiffKind::Thm5, DiffKind::Cor1, DiffKind::Thm6, DiffKind::Thm7, DiffKind::Thm8];

    pub fn name(self) -> &'static str {
        match self {
            DiffKind::Thm3 => "thm3",
            DiffKind::Thm4 => "thm4",
            DiffKind::Thm5 => "thm5",
            DiffKind::Cor1 => "cor1",
            DiffKind::Thm6 => "thm6",
            DiffKind::Thm7 => "thm7",
            DiffKind::Thm8 => "thm8",
        }
    }
}

impl fmt::Display for DiffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiffKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        DiffKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown difftest {s}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub max_gates: usize,
    pub max_vertices: usize,
    pub halting_within: u64,
    pub max_layers: usize,
    pub max_period: usize,
    pub inner_budget: u64,
    /// Inputs and labels are integers in `[-value_range, value_range]`.
    pub value_range: i64,
}

impl Bounds {
    pub fn for_kind(kind: DiffKind) -> Self {
        let mut b = Bounds {
            max_gates: 15,
            max_vertices: 5,
            halting_within: 12,
            max_layers: 8,
            max_period: 3,
            inner_budget: 16,
            value_range: 4,
        };
        match kind {
            DiffKind::Thm6 | DiffKind::Thm7 => b.halting_within = 10,
            DiffKind::Thm8 => {
                b.max_vertices = 4;
                b.halting_within = 3;
            }
            _ => {}
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffTestConfig {
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub bounds: Bounds,
    #[serde(skip)]
    pub exec: Exec,
    /// Shrink the first counterexample before reporting it.
    pub shrink: bool,
}

impl DiffTestConfig {
    pub fn new(kind: DiffKind, seed: u64, trials: usize) -> Self {
        DiffTestConfig {
            seed,
            trials,
            tolerance: TOLERANCE,
            bounds: Bounds::for_kind(kind),
            exec: Exec::default(),
            shrink: true,
        }
    }
}

/// Everything needed to reproduce a failing trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproBundle {
    pub test: DiffKind,
    pub seed: u64,
    pub trial: usize,
    pub detail: String,
    pub artifacts: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrunk: Option<Value>,
    pub replay: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub test: DiffKind,
    pub seed: u64,
    pub trials: usize,
    pub passed: usize,
    pub failed: usize,
    /// Trials whose drawn instance lies outside the compiler's contract.
    pub skipped: usize,
    pub first_failure: Option<ReproBundle>,
}

impl DiffReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// A comparison that went wrong, with the artifacts to show for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub detail: String,
    pub artifacts: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Pass,
    Skip(String),
    Fail(Mismatch),
}

fn fail(detail: impl Into<String>, artifacts: Value) -> Outcome {
    Outcome::Fail(Mismatch { detail: detail.into(), artifacts })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    if tol == 0.0 {
        a == b
    } else {
        approx_eq_slice(a, b, tol)
    }
}

// ---- single-instance checks ----

/// `compose(f, g)` against running `f` then `g`, plus the sign gate in the
/// composed halting circuit.
pub fn check_compose(f: &RecurrentCircuit, g: &RecurrentCircuit, x: &[f64], tol: f64) -> Outcome {
    let art = || json!({ "f": f, "g": g, "input": x });
    let Ok((y, _)) = f.run(x, 10_000) else { return Outcome::Skip("f does not halt".into()) };
    let Ok((want, _)) = g.run(&y, 10_000) else { return Outcome::Skip("g does not halt".into()) };
    let h = match compose_recurrent(f, g) {
        Ok(h) => h,
        Err(e) => return fail(format!("compose failed: {e}"), art()),
    };
    if h.halting.circuit().is_none_or(|c| c.count_activation("sign") == 0) {
        return fail("composed halting circuit has no sign gate", art());
    }
    match h.run(x, 100_000) {
        Ok((got, _)) if close(&got, &want, tol) => Outcome::Pass,
        Ok((got, _)) => fail(format!("composed gives {got:?}, sequential {want:?}"), art()),
        Err(e) => fail(format!("composed run failed: {e}"), art()),
    }
}

fn gnn_reference(gnn: &RecCGnn, g: &LabelledGraph, budget: usize) -> Result<Vec<f64>, String> {
    run_gnn(gnn, g, &RunOptions { outer_budget: budget, ..Default::default() })
        .map(|r| encode_graph(&r.graph))
        .map_err(|e| e.to_string())
}

/// A GNN-to-circuit compiler against the interpreter on the encoded graph.
pub fn check_gnn_to_circuit(kind: DiffKind, gnn: &RecCGnn, g: &LabelledGraph, tol: f64) -> Outcome {
    let art = || json!({ "gnn": gnn, "graph": g });
    let want = match gnn_reference(gnn, g, 1000) {
        Ok(w) => w,
        Err(e) => return Outcome::Skip(format!("gnn does not run: {e}")),
    };
    let shape = g.shape();
    let compiled = match kind {
        DiffKind::Thm4 => compile_gnn_outer_to_circuit(gnn, &shape),
        DiffKind::Thm5 => compile_gnn_inner_to_circuit(gnn, &shape),
        DiffKind::Cor1 => compile_gnn_full_to_circuit(gnn, &shape),
        _ => unreachable!("not a gnn-to-circuit test"),
    };
    let rec = match compiled {
        Ok((rec, _)) => rec,
        Err(e) => return fail(format!("compile failed: {e}"), art()),
    };
    match rec.run(&encode_graph(g), 1_000_000) {
        Ok((got, _)) if close(&got, &want, tol) => Outcome::Pass,
        Ok((got, _)) => fail(format!("circuit gives {got:?}, gnn {want:?}"), art()),
        Err(e) => fail(format!("circuit run failed: {e}"), art()),
    }
}

/// Circuit-to-GNN: output vertices carry `run(rec, x)` and the GNN takes
/// exactly `iterations × period` layers.
pub fn check_circuit_to_gnn(rec: &RecurrentCircuit, x: &[f64], mode: ActivationMode, tol: f64) -> Outcome {
    let art = || json!({ "circuit": rec, "input": x, "mode": mode });
    let Ok((want, trace)) = rec.run(x, 10_000) else { return Outcome::Skip("circuit does not halt".into()) };
    let a = match compile_circuit_to_outer_gnn(rec, mode) {
        Ok(a) => a,
        Err(e) => return fail(format!("compile failed: {e}"), art()),
    };
    let g = match instantiate_encoding(&a.graph, &a.circuit, x) {
        Ok(g) => g,
        Err(e) => return fail(format!("encoding failed: {e}"), art()),
    };
    let layers = trace.iterations() * a.schedule.period;
    let run = match run_gnn(&a.gnn, &g, &RunOptions { outer_budget: layers + 1, ..Default::default() }) {
        Ok(r) => r,
        Err(e) => return fail(format!("gnn run failed: {e}"), art()),
    };
    let got: Vec<f64> = a.output_vertices().iter().map(|&v| run.graph.labels[v]).collect();
    if !close(&got, &want, tol) {
        return fail(format!("gnn outputs {got:?}, circuit {want:?}"), art());
    }
    if run.layers != layers {
        return fail(format!("gnn halted after {} layers, expected {layers}", run.layers), art());
    }
    Outcome::Pass
}

/// Symmetric compilation: output side carries `f(x)`, input side keeps `x`.
pub fn check_symmetric(rec: &RecurrentCircuit, x: &[f64], tol: f64, inner_budget: u64) -> Outcome {
    let art = || json!({ "circuit": rec, "input": x });
    let Ok((want, _)) = rec.run(x, inner_budget) else { return Outcome::Skip("circuit does not halt".into()) };
    let a = match compile_symmetric_circuit_to_inner_gnn(rec, 100, 0, inner_budget) {
        Ok(a) => a,
        Err(e) => return fail(format!("compile failed: {e}"), art()),
    };
    if a.is_ambiguous(x) {
        return Outcome::Skip("input is a permutation of 1..=m".into());
    }
    let g = bipartite_encode(a.n, a.m, x).expect("sizes match");
    let run = match run_gnn(&a.gnn, &g, &RunOptions::default()) {
        Ok(r) => r,
        Err(e) => return fail(format!("gnn run failed: {e}"), art()),
    };
    let (ins, outs) = run.graph.labels.split_at(a.n);
    if !close(outs, &want, tol) {
        return fail(format!("output side {outs:?}, circuit {want:?}"), art());
    }
    if ins != x {
        return fail(format!("input side changed to {ins:?}"), art());
    }
    Outcome::Pass
}

// ---- generation ----

fn constraints(b: &Bounds, sign_free: bool) -> CircuitConstraints {
    CircuitConstraints {
        max_gates: b.max_gates,
        halting_within: b.halting_within,
        sign_free,
        value_range: b.value_range,
        ..Default::default()
    }
}

fn gnn_constraints(kind: DiffKind, b: &Bounds) -> GnnConstraints {
    GnnConstraints {
        max_vertices: b.max_vertices,
        max_period: b.max_period,
        max_layers: b.max_layers,
        inner_cap: matches!(kind, DiffKind::Thm5 | DiffKind::Cor1).then_some((b.inner_budget - 1).max(1) as u32),
        fixed_layers: kind == DiffKind::Thm5,
        sign_activations: false,
    }
}

/// The instance a trial tests, as JSON, and its outcome.
pub fn run_trial(kind: DiffKind, cfg: &DiffTestConfig, trial: usize) -> Outcome {
    let rng = &mut trial_rng(cfg.seed, trial);
    let b = &cfg.bounds;
    let tol = cfg.tolerance;
    let budget = b.halting_within;
    match kind {
        DiffKind::Thm3 => {
            let c = constraints(b, false);
            let (f, x) = gen_instance(rng, b.value_range, budget, |r| gen_random_circuit(r, &c));
            let y = f.run(&x, budget).expect("well behaved").0;
            let g = loop {
                let g = gen_random_circuit(rng, &CircuitConstraints { max_inputs: f.m(), ..c.clone() });
                if g.n() == f.m() && well_behaved(&g, &y, budget) {
                    break g;
                }
            };
            check_compose(&f, &g, &x, tol)
        }
        DiffKind::Thm4 | DiffKind::Thm5 | DiffKind::Cor1 => {
            let (gnn, g) = gen_gnn_instance(rng, &gnn_constraints(kind, b));
            check_gnn_to_circuit(kind, &gnn, &g, tol)
        }
        DiffKind::Thm6 => {
            let c = constraints(b, false);
            let (rec, x) = gen_instance(rng, b.value_range, budget, |r| gen_random_circuit(r, &c));
            check_circuit_to_gnn(&rec, &x, ActivationMode::Embedded, tol)
        }
        DiffKind::Thm7 => {
            let (rec, x) = gen_instance(rng, b.value_range, budget, |r| gen_predecessor_form(r, b.max_gates));
            check_circuit_to_gnn(&rec, &x, ActivationMode::Global, tol)
        }
        DiffKind::Thm8 => {
            let n = rng.random_range(1..=b.max_vertices);
            let m = rng.random_range(1..=3);
            let (rec, x) = gen_instance(rng, b.value_range, budget, |r| gen_symmetric_template(r, n, m, budget));
            check_symmetric(&rec, &x, tol, b.inner_budget)
        }
    }
}

fn replay_command(kind: DiffKind, seed: u64, trial: usize) -> String {
    format!("reccirc difftest {kind} --seed {seed} --trial {trial} --json")
}

/// Tries deleting gates or vertices while the comparison keeps failing.
fn shrink_failure(kind: DiffKind, cfg: &DiffTestConfig, artifacts: &Value) -> Option<Value> {
    let failing = |o: Outcome| matches!(o, Outcome::Fail(_));
    let tol = cfg.tolerance;
    match kind {
        DiffKind::Thm4 | DiffKind::Thm5 | DiffKind::Cor1 => {
            let gnn: RecCGnn = serde_json::from_value(artifacts["gnn"].clone()).ok()?;
            let g: LabelledGraph = serde_json::from_value(artifacts["graph"].clone()).ok()?;
            let small = shrink(g, vertex_deletions, |h| failing(check_gnn_to_circuit(kind, &gnn, h, tol)));
            Some(json!({ "gnn": gnn, "graph": small }))
        }
        DiffKind::Thm6 | DiffKind::Thm7 => {
            let rec: RecurrentCircuit = serde_json::from_value(artifacts["circuit"].clone()).ok()?;
            let x: Vec<f64> = serde_json::from_value(artifacts["input"].clone()).ok()?;
            let mode = if kind == DiffKind::Thm7 { ActivationMode::Global } else { ActivationMode::Embedded };
            let small = shrink(rec, circuit_deletions, |r| failing(check_circuit_to_gnn(r, &x, mode, tol)));
            Some(json!({ "circuit": small, "input": x, "mode": mode }))
        }
        DiffKind::Thm3 => {
            let f: RecurrentCircuit = serde_json::from_value(artifacts["f"].clone()).ok()?;
            let g: RecurrentCircuit = serde_json::from_value(artifacts["g"].clone()).ok()?;
            let x: Vec<f64> = serde_json::from_value(artifacts["input"].clone()).ok()?;
            let f = shrink(f, circuit_deletions, |f| failing(check_compose(f, &g, &x, tol)));
            let g = shrink(g, circuit_deletions, |g| failing(check_compose(&f, g, &x, tol)));
            Some(json!({ "f": f, "g": g, "input": x }))
        }
        // deleting gates would break symmetry
        DiffKind::Thm8 => None,
    }
}

/// Runs `cfg.trials` trials and merges them in trial order.
pub fn difftest(kind: DiffKind, cfg: &DiffTestConfig) -> DiffReport {
    difftest_trials(kind, cfg, 0..cfg.trials)
}

/// Runs the given trial indices only; used to replay a failure.
pub fn difftest_trials(kind: DiffKind, cfg: &DiffTestConfig, trials: std::ops::Range<usize>) -> DiffReport {
    let start = trials.start;
    let outcomes = cfg.exec.map_range(trials.len(), |i| run_trial(kind, cfg, start + i));
    let mut report = DiffReport {
        test: kind,
        seed: cfg.seed,
        trials: outcomes.len(),
        passed: 0,
        failed: 0,
        skipped: 0,
        first_failure: None,
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Outcome::Pass => report.passed += 1,
            Outcome::Skip(_) => report.skipped += 1,
            Outcome::Fail(m) => {
                report.failed += 1;
                if report.first_failure.is_none() {
                    let trial = start + i;
                    let shrunk = if cfg.shrink { shrink_failure(kind, cfg, &m.artifacts) } else { None };
                    report.first_failure = Some(ReproBundle {
                        test: kind,
                        seed: cfg.seed,
                        trial,
                        detail: m.detail,
                        artifacts: m.artifacts,
                        shrunk,
                        replay: replay_command(kind, cfg.seed, trial),
                    });
                }
            }
        }
    }
    report
}
