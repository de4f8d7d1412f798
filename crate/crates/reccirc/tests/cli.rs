//! End-to-end runs of the `reccirc` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use reccirc::compile::{compile_circuit_to_outer_gnn, ActivationMode};
use reccirc::encoding::instantiate_encoding;
use reccirc::gnn::{ac_to_cgnn, run_gnn, GnnHalting, RunOptions};
use reccirc::graph::LabelledGraph;
use reccirc::harness::fixtures::{fibonacci, never_halts, plus_one, times_two};

struct Scratch(PathBuf);

impl Scratch {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("reccirc-cli-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn put(&self, name: &str, value: &impl serde::Serialize) -> PathBuf {
        let p = self.0.join(name);
        std::fs::write(&p, serde_json::to_string(value).unwrap()).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn reccirc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reccirc")).args(args).env_remove("RECCIRC_SEED").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_stdout(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad json {e}: {}", stdout(o)))
}

fn json_stderr(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

/// The file parses as `T` and re-serializes to the same JSON value.
fn round_trips<T: serde::de::DeserializeOwned + serde::Serialize>(p: &Path) {
    let text = std::fs::read_to_string(p).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let t: T = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_value(&t).unwrap(), v, "{}", p.display());
}

#[test]
fn run_rec_fibonacci() {
    let d = Scratch::new("fib");
    let fib = d.put("fib.json", &fibonacci());
    let o = reccirc(&["run-rec", "--circuit", s(&fib), "--input", "7"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "13");
    let o = reccirc(&["run-rec", "--circuit", s(&fib), "--input", "10", "--json", "--trace"]);
    let v = json_stdout(&o);
    assert_eq!(v["outputs"][0], 55.0);
    assert_eq!(v["trace"]["records"].as_array().unwrap().len(), v["iterations"].as_u64().unwrap() as usize);
}

#[test]
fn non_halting_is_a_domain_error() {
    let d = Scratch::new("nonhalt");
    let c = d.put("c.json", &never_halts());
    let o = reccirc(&["run-rec", "--circuit", s(&c), "--input", "1", "--budget", "25", "--json"]);
    assert_eq!(o.status.code(), Some(1));
    let e = json_stderr(&o);
    assert_eq!(e["error"], "non-halting");
    assert_eq!(e["detail"]["records"], 25);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(reccirc(&["run-rec", "--bogus"]).status.code(), Some(2));
    let o = reccirc(&["frobnicate", "--json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json_stderr(&o)["error"], "usage");
    let d = Scratch::new("usage");
    let fib = d.put("fib.json", &fibonacci());
    let o = reccirc(&["run-rec", "--circuit", s(&fib), "--input", "1,2", "--json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(json_stderr(&o)["message"].as_str().unwrap().contains("inputs"));
}

#[test]
fn check_reports_cycles() {
    let d = Scratch::new("cycle");
    let cyclic = serde_json::json!({
        "gates": [
            { "kind": "input", "preds": [] },
            { "kind": "add", "preds": [0, 2] },
            { "kind": "add", "preds": [1] },
            { "kind": "output", "preds": [2] }
        ],
        "inputs": [0], "aux_memory": [], "outputs": [3]
    });
    let p = d.put("cyclic.json", &cyclic);
    let o = reccirc(&["check", "--circuit", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("cycle"));
    let o = reccirc(&["check", "--circuit", s(&p), "--json"]);
    assert_eq!(json_stdout(&o)["ok"], false);
    let fib = d.put("fib.json", &fibonacci());
    assert!(reccirc(&["check", "--circuit", s(&fib)]).status.success());
}

#[test]
fn export_dot_fibonacci() {
    let d = Scratch::new("dot");
    let fib = d.put("fib.json", &fibonacci());
    let o = reccirc(&["export-dot", "--circuit", s(&fib)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let nodes = text.lines().filter(|l| l.trim_start().starts_with('g') && l.contains("[label=")).count();
    assert_eq!(nodes, 5);
    assert!(text.contains("style=dashed"));
    assert!(text.contains("peripheries=2"));
}

#[test]
fn compile_gnn_to_circuit_directions() {
    let d = Scratch::new("gnn2circ");
    let gnn = ac_to_cgnn(1.0, 1.0, 0.0, "id", 2, GnnHalting::FixedLayer { k: 3 });
    let g = LabelledGraph::new(3, [(0, 1), (1, 2)], vec![1.0, 2.0, 3.0]).unwrap();
    let gp = d.put("gnn.json", &gnn);
    let shape = d.put("shape.json", &g.shape());
    let graph = d.put("graph.json", &g);
    let want = run_gnn(&gnn, &g, &RunOptions::default()).unwrap();
    let tuple = stdout(&reccirc(&["encode-graph", "--graph", s(&graph)]));
    let tuple: Vec<f64> = serde_json::from_str(&tuple).unwrap();
    for dir in ["gnn2circ", "gnn2circ-inner", "gnn2circ-full"] {
        let out = d.path(&format!("{dir}.json"));
        let o = reccirc(&["compile", dir, "--gnn", s(&gp), "--graph-shape", s(&shape), "--out", s(&out), "--json"]);
        assert!(o.status.success(), "{dir}: {}", String::from_utf8_lossy(&o.stderr));
        let report = json_stdout(&o);
        assert_eq!(report["direction"], dir);
        round_trips::<reccirc::recurrent::RecurrentCircuit>(&out);
        let c = reccirc(&["check", "--circuit", s(&out)]);
        assert!(c.status.success(), "{dir} fails check: {:?} {} {}", c.status, stdout(&c), String::from_utf8_lossy(&c.stderr));
        let input = serde_json::to_string(&tuple).unwrap();
        let run = json_stdout(&reccirc(&["run-rec", "--circuit", s(&out), "--input", &input, "--json"]));
        let got: Vec<f64> = serde_json::from_value(run["outputs"].clone()).unwrap();
        assert_eq!(&got[9..], &want.graph.labels[..], "{dir}");
    }
}

#[test]
fn compile_circuit_to_gnn_directions() {
    let d = Scratch::new("circ2gnn");
    let fib = d.put("fib.json", &fibonacci());
    let (og, ogr) = (d.path("gnn.json"), d.path("graph.json"));
    let o = reccirc(&[
        "compile", "circ2gnn-outer", "--circuit", s(&fib), "--out-gnn", s(&og), "--out-graph", s(&ogr), "--input", "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    round_trips::<reccirc::gnn::RecCGnn>(&og);
    round_trips::<LabelledGraph>(&ogr);
    assert!(reccirc(&["check", "--gnn", s(&og)]).status.success());
    let run = json_stdout(&reccirc(&["run-gnn", "--gnn", s(&og), "--graph", s(&ogr), "--outer-budget", "100000", "--json"]));
    let art = compile_circuit_to_outer_gnn(&fibonacci(), ActivationMode::Embedded).unwrap();
    let v = art.output_vertices()[0];
    assert_eq!(run["graph"]["labels"][v], 21.0);
    let g = instantiate_encoding(&art.graph, &art.circuit, &[8.0]).unwrap();
    assert_eq!(serde_json::to_value(&g).unwrap(), serde_json::from_str::<Value>(&std::fs::read_to_string(&ogr).unwrap()).unwrap());

    let sym = d.path("sym.json");
    let o = reccirc(&["compile", "circ2gnn-outer", "--circuit", s(&fib), "--out-gnn", s(&og), "--out-graph", s(&sym)]);
    assert!(o.status.success());
    assert!(reccirc(&["check", "--symbolic", s(&sym)]).status.success());

    let sum = d.put("sum.json", &{
        let mut b = reccirc::builder::CircuitBuilder::new();
        let xs: Vec<_> = (0..3).map(|_| b.input()).collect();
        let t = b.add(&xs);
        b.output(t);
        reccirc::gnn::one_shot(b.finish())
    });
    let (ig, igr) = (d.path("igner.json"), d.path("igraph.json"));
    let o = reccirc(&[
        "compile", "circ2gnn-inner", "--circuit", s(&sum), "--out-gnn", s(&ig), "--out-graph", s(&igr), "--input", "1,2,4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(reccirc(&["check", "--gnn", s(&ig)]).status.success());
    let out = stdout(&reccirc(&["run-gnn", "--gnn", s(&ig), "--graph", s(&igr)]));
    assert_eq!(out.trim(), "1 2 4 7");
}

#[test]
fn compose_and_difftest() {
    let d = Scratch::new("compose");
    let (f, g) = (d.put("f.json", &plus_one()), d.put("g.json", &times_two()));
    let out = d.path("h.json");
    assert!(reccirc(&["compose", "--first", s(&f), "--second", s(&g), "--out", s(&out)]).status.success());
    assert_eq!(stdout(&reccirc(&["run-rec", "--circuit", s(&out), "--input", "3"])).trim(), "8");

    let o = reccirc(&["difftest", "thm3", "--trials", "5", "--seed", "4", "--json"]);
    assert!(o.status.success());
    let r = json_stdout(&o);
    assert_eq!(r["passed"], 5);
    let again = json_stdout(&reccirc(&["difftest", "thm3", "--trials", "5", "--seed", "4", "--json", "--sequential"]));
    assert_eq!(r, again);

    let o = Command::new(env!("CARGO_BIN_EXE_reccirc"))
        .args(["difftest", "thm8", "--trials", "3", "--json"])
        .env("RECCIRC_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(json_stdout(&o)["seed"], 77);
    let one = json_stdout(&reccirc(&["difftest", "thm6", "--seed", "2", "--trial", "3", "--json"]));
    assert_eq!(one["trials"], 1);
}
