//! Acceptance gate: one PASS/FAIL line per criterion with its time limit.
//! Exits non-zero when any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use reccirc::circuit::{approx_eq, approx_eq_slice, TOLERANCE};
use reccirc::encoding::{symbolic_encode_circuit, HaltCopies};
use reccirc::gadgets::{build_chi_a, build_equality_sign, build_mod_counter, lower_builtin_halting, make_iteration_free};
use reccirc::gnn::{run_gnn, RunOptions};
use reccirc::graph::{decode_graph, encode_graph};
use reccirc::harness::difftest::{difftest, DiffKind, DiffTestConfig};
use reccirc::harness::fixtures::{fibonacci, never_halts};
use reccirc::harness::gen::{
    gen_gnn_instance, gen_graph, gen_instance, gen_permutation, gen_random_circuit, trial_rng, CircuitConstraints,
    GnnConstraints,
};
use reccirc::harness::oracle::{brute_force_gnn, naive_run};
use reccirc::recurrent::{fold_iteration_counter, RunError};

const SEED: u64 = 20_240_601;

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, id: &str, what: &str, limit: Duration, f: impl FnOnce() -> Result<String, String>) {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let in_time = took <= limit;
        let (ok, detail) = match res {
            Ok(d) => (in_time, d),
            Err(e) => (false, e),
        };
        if !ok {
            self.failures += 1;
        }
        println!(
            "{} [{id}] {what}: {detail} ({:.2} s, limit {} s{})",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", too slow" }
        );
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn difftest_line(kind: DiffKind, trials: usize) -> Result<String, String> {
    let r = difftest(kind, &DiffTestConfig::new(kind, SEED, trials));
    let line = format!("{kind}: {}/{} passed, {} skipped", r.passed, r.trials, r.skipped);
    if r.ok() && r.passed + r.skipped == trials && r.skipped * 10 <= trials {
        Ok(line)
    } else {
        Err(format!("{line}; first failure: {}", serde_json::to_string(&r.first_failure).unwrap_or_default()))
    }
}

fn fibonacci_cli() -> Result<String, String> {
    let want = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 34.0, 55.0];
    let fib = fibonacci();
    let dir = std::env::temp_dir().join(format!("reccirc-accept-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("fib.json");
    std::fs::write(&path, serde_json::to_string(&fib).unwrap()).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (x, w) in (2..=10).zip(want) {
        let lib = fib.run(&[x as f64], 1000).map_err(|e| e.to_string())?.0;
        ensure(lib == vec![w], || format!("library run on {x} gave {lib:?}"))?;
        let out = Command::new(env!("CARGO_BIN_EXE_reccirc"))
            .args(["run-rec", "--circuit"])
            .arg(&path)
            .args(["--input", &x.to_string()])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("run-rec exited with {}", out.status))?;
        let text = String::from_utf8_lossy(&out.stdout).trim().to_string();
        let v: f64 = text.parse().map_err(|_| format!("unparsable output {text:?}"))?;
        ensure(v == w, || format!("run-rec on {x} printed {v}, want {w}"))?;
        got.push(text);
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("outputs ({})", got.join(",")))
}

fn gadget_exhaustives() -> Result<String, String> {
    let eq = build_equality_sign().circuit;
    for a in -3..=3 {
        for b in -3..=3 {
            let out = eq.evaluate(&[a as f64, b as f64], &[]).map_err(|e| e.to_string())?.0[0];
            let want = if a == b { 1.0 } else { 0.0 };
            ensure(out == want, || format!("equality({a}, {b}) = {out}"))?;
        }
    }
    let universe = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    let mut sets = 0;
    for mask in 1u32..(1 << universe.len()) {
        if mask.count_ones() > 4 {
            continue;
        }
        let set: Vec<f64> = (0..universe.len()).filter(|i| mask >> i & 1 == 1).map(|i| universe[i]).collect();
        for &a in &set {
            let chi = build_chi_a(&set, a).map_err(|e| e.to_string())?.circuit;
            for &x in &set {
                let out = chi.evaluate(&[x], &[]).map_err(|e| e.to_string())?.0[0];
                let want = if x == a { 1.0 } else { 0.0 };
                ensure((out - want).abs() <= 1e-12, || format!("chi_{{{set:?},{a}}}({x}) = {out}"))?;
            }
        }
        sets += 1;
    }
    for d in 1..=6 {
        let rec = build_mod_counter(d).into_recurrent(3 * d as u64);
        let (_, trace) = rec.run(&[], 1000).map_err(|e| e.to_string())?;
        ensure(trace.iterations() == 3 * d, || format!("mod-{d} counter ran {} iterations", trace.iterations()))?;
        for r in &trace.records {
            let want = ((r.iteration as usize - 1) % d + 1) as f64;
            ensure(r.outputs == vec![want], || format!("mod-{d} counter at {} gave {:?}", r.iteration, r.outputs))?;
        }
    }
    Ok(format!("49 equality pairs, {sets} chi sets, counters d = 1..6"))
}

fn structural() -> Result<String, String> {
    for t in 0..200 {
        let g = gen_graph(&mut trial_rng(SEED, t), 6, 4);
        let back = decode_graph(&encode_graph(&g)).map_err(|e| e.to_string())?;
        ensure(back == g, || format!("round trip changed graph {t}"))?;
    }
    let c = CircuitConstraints::default();
    for t in 0..100 {
        let rec = make_iteration_free(&gen_random_circuit(&mut trial_rng(SEED + 1, t), &c));
        let sym = symbolic_encode_circuit(&rec, HaltCopies::Safe).map_err(|e| e.to_string())?;
        sym.check_degree_scheme().map_err(|e| format!("circuit {t}: {e}"))?;
    }
    for t in 0..200 {
        let rng = &mut trial_rng(SEED + 2, t);
        let rec = gen_random_circuit(rng, &c);
        let u = &rec.underlying;
        let once = u.balance();
        ensure(once.is_balanced_dag(), || format!("circuit {t} not balanced"))?;
        ensure(once.balance() == once, || format!("balancing circuit {t} twice changed it"))?;
        for _ in 0..5 {
            let x: Vec<f64> = (0..rec.n()).map(|_| rng.random_range(-4..=4) as f64).collect();
            let a = &rec.initial_aux;
            match (u.evaluate(&x, a), once.evaluate(&x, a)) {
                (Ok((o1, _)), Ok((o2, _))) => ensure(o1 == o2, || format!("balance changed circuit {t}"))?,
                (Err(_), Err(_)) => {}
                _ => return Err(format!("balance changed whether circuit {t} evaluates")),
            }
        }
    }
    let gc = GnnConstraints { inner_cap: Some(8), sign_activations: true, ..Default::default() };
    for t in 0..100 {
        let rng = &mut trial_rng(SEED + 3, t);
        let (gnn, g) = gen_gnn_instance(rng, &gc);
        let perm = gen_permutation(rng, g.n);
        let opts = RunOptions { outer_budget: 8, ..Default::default() };
        let a = run_gnn(&gnn, &g, &opts).map_err(|e| e.to_string())?;
        let b = run_gnn(&gnn, &g.permuted(&perm), &opts).map_err(|e| e.to_string())?;
        ensure(a.layers == b.layers, || format!("instance {t}: layer counts differ"))?;
        for v in 0..g.n {
            let (x, y) = (a.graph.labels[v], b.graph.labels[perm[v]]);
            ensure(approx_eq(x, y, TOLERANCE), || format!("instance {t}: vertex {v} {x} vs {y}"))?;
        }
    }
    Ok("200 round trips, 100 degree schemes, 200 balances, 100 permutations".into())
}

fn oracles() -> Result<String, String> {
    let gc = GnnConstraints { inner_cap: Some(10), sign_activations: true, ..Default::default() };
    for t in 0..500 {
        let (gnn, g) = gen_gnn_instance(&mut trial_rng(SEED + 4, t), &gc);
        let fast = run_gnn(&gnn, &g, &RunOptions { outer_budget: 8, ..Default::default() });
        let slow = brute_force_gnn(&gnn, &g, 8);
        match (fast, slow) {
            (Ok(f), Ok((s, layers))) => {
                ensure(f.layers == layers && approx_eq_slice(&f.graph.labels, &s, TOLERANCE), || {
                    format!("gnn {t}: {:?} after {} vs {s:?} after {layers}", f.graph.labels, f.layers)
                })?;
            }
            (f, s) => return Err(format!("gnn {t}: interpreter {:?}, oracle {:?}", f.map(|r| r.layers), s)),
        }
    }
    let c = CircuitConstraints::default();
    for t in 0..500 {
        let rng = &mut trial_rng(SEED + 5, t);
        let (rec, x) = gen_instance(rng, 4, 12, |r| gen_random_circuit(r, &c));
        let (out, trace) = rec.run(&x, 12).map_err(|e| e.to_string())?;
        let (nout, it) = naive_run(&rec, &x, 12)?;
        ensure(out == nout && it == trace.iterations() as u64, || format!("circuit {t}: {out:?} vs {nout:?}"))?;
    }
    Ok("500 gnn and 500 circuit instances, zero disagreements".into())
}

fn negative() -> Result<String, String> {
    let budget = 37;
    match never_halts().run(&[1.0], budget) {
        Err(RunError::NonHalting { budget: b, trace }) => {
            ensure(b == budget && trace.iterations() == budget as usize, || {
                format!("non-halting trace has {} records", trace.iterations())
            })?;
        }
        other => return Err(format!("non-halting circuit gave {other:?}")),
    }
    let c = CircuitConstraints::default();
    for t in 0..100 {
        let rng = &mut trial_rng(SEED + 6, t);
        let (rec, x) = gen_instance(rng, 4, 12, |r| gen_random_circuit(r, &c));
        let lowered = lower_builtin_halting(&rec);
        let folded = fold_iteration_counter(&lowered).map_err(|e| e.to_string())?;
        let (a, ta) = rec.run(&x, 100).map_err(|e| e.to_string())?;
        let (b, tb) = folded.run(&x, 100).map_err(|e| e.to_string())?;
        ensure(a == b && ta.iterations() == tb.iterations(), || format!("fold changed circuit {t}"))?;
    }
    Ok(format!("budget {budget} gives {budget} records; 100 folds preserve runs"))
}

fn main() {
    let mut gate = Gate { failures: 0 };
    gate.check("1", "Fibonacci via run-rec on x = 2..10", secs(1), fibonacci_cli);
    gate.check("2", "composition, 500 pairs", secs(30), || difftest_line(DiffKind::Thm3, 500));
    gate.check("3", "outer GNN to circuit, 200 GNNs", secs(60), || difftest_line(DiffKind::Thm4, 200));
    gate.check("4", "inner and full GNN to circuit, 100 each", secs(120), || {
        Ok(format!("{}; {}", difftest_line(DiffKind::Thm5, 100)?, difftest_line(DiffKind::Cor1, 100)?))
    });
    gate.check("5", "circuit to outer GNN, 100 each mode", secs(120), || {
        Ok(format!("{}; {}", difftest_line(DiffKind::Thm6, 100)?, difftest_line(DiffKind::Thm7, 100)?))
    });
    gate.check("6", "symmetric circuit to bipartite GNN, 100", secs(30), || difftest_line(DiffKind::Thm8, 100));
    gate.check("7", "gadget exhaustives", secs(5), gadget_exhaustives);
    gate.check("8", "structural invariants", secs(30), structural);
    gate.check("9", "oracle agreement", secs(60), oracles);
    gate.check("10", "non-halting budget and counter folding", secs(30), negative);
    println!("{} criteria failed", gate.failures);
    if gate.failures > 0 {
        std::process::exit(1);
    }
}
