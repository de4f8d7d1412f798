//! Command-line front end: evaluation, compilation, difftests, encodings and
//! DOT export over the JSON formats in docs/formats.md.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use reccirc::circuit::{real_from_str, ExtendedCircuit};
use reccirc::compile::{
    compile_circuit_to_outer_gnn, compile_gnn_full_to_circuit, compile_gnn_inner_to_circuit,
    compile_gnn_outer_to_circuit, compile_symmetric_circuit_to_inner_gnn, ActivationMode, CompileReport,
};
use reccirc::dot::{graph_to_dot, recurrent_to_dot};
use reccirc::encoding::{
    instantiate_encoding, symbolic_encode_circuit_bounded, EncodeError, HaltCopies,
    SymbolicLabelledGraph,
};
use reccirc::exec::Exec;
use reccirc::gadgets::{compose_recurrent, make_iteration_free};
use reccirc::gnn::{run_gnn, RecCGnn, RunOptions};
use reccirc::graph::{bipartite_encode, decode_graph, encode_graph, GraphShape, LabelledGraph};
use reccirc::harness::difftest::{difftest, difftest_trials, DiffKind, DiffTestConfig};
use reccirc::recurrent::{RecurrentCircuit, RunError, DEFAULT_BUDGET};

#[derive(Parser)]
#[command(name = "reccirc", version, about = "Recurrent arithmetic circuits and recurrent circuit-GNNs")]
struct Cli {
    /// Machine-readable output; errors go to stderr as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate an extended circuit once.
    Eval {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long, default_value = "")]
        input: String,
        /// Auxiliary memory values; defaults to the file's initial_aux, if any.
        #[arg(long)]
        aux: Option<String>,
    },
    /// Run a recurrent circuit until it halts.
    RunRec {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long, default_value = "")]
        input: String,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Include the per-iteration trace (with --json).
        #[arg(long)]
        trace: bool,
    },
    /// Run a recurrent C-GNN on a labelled graph.
    RunGnn {
        #[arg(long)]
        gnn: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 1000)]
        outer_budget: usize,
    },
    /// Encode a recurrent circuit as a labelled graph.
    EncodeCircuit {
        #[arg(long)]
        circuit: PathBuf,
        /// Instantiate the labels with this input instead of printing them symbolically.
        #[arg(long)]
        input: Option<String>,
        /// Use exactly n + m + ℓ + 1 halting copies.
        #[arg(long)]
        minimal_copies: bool,
    },
    /// Print the real tuple of a labelled graph, or decode one with --decode.
    EncodeGraph {
        #[arg(long, required_unless_present = "decode")]
        graph: Option<PathBuf>,
        /// A file holding a JSON array of reals.
        #[arg(long, conflicts_with = "graph")]
        decode: Option<PathBuf>,
    },
    /// Compile between circuits and GNNs; prints a compile report.
    Compile(CompileArgs),
    /// Compose two recurrent circuits: the result computes second ∘ first.
    Compose {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Differential test of one compiler.
    Difftest {
        #[arg(value_enum)]
        test: TestName,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Defaults to $RECCIRC_SEED, else 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this trial index (replays a reported failure).
        #[arg(long)]
        trial: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Validate an artifact and scan its invariants.
    Check(ArtifactArgs),
    /// Graphviz DOT for a circuit or a graph.
    ExportDot {
        #[command(flatten)]
        artifact: ArtifactArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ArtifactArgs {
    #[arg(long)]
    circuit: Option<PathBuf>,
    #[arg(long)]
    gnn: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// A symbolic circuit encoding from encode-circuit.
    #[arg(long)]
    symbolic: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(value_enum)]
    direction: Direction,
    #[arg(long)]
    gnn: Option<PathBuf>,
    /// Graph shape (labels, if present, are ignored).
    #[arg(long)]
    graph_shape: Option<PathBuf>,
    #[arg(long)]
    circuit: Option<PathBuf>,
    /// Output circuit for the GNN-to-circuit directions.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_gnn: Option<PathBuf>,
    #[arg(long)]
    out_graph: Option<PathBuf>,
    /// Write the instantiated graph for this input instead of the symbolic one.
    #[arg(long)]
    input: Option<String>,
    /// Apply activations as whole layers (needs predecessor form).
    #[arg(long)]
    global_activations: bool,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    inner_budget: u64,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Gnn2circ,
    Gnn2circInner,
    Gnn2circFull,
    Circ2gnnOuter,
    Circ2gnnInner,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestName {
    Thm3,
    Thm4,
    Thm5,
    Thm6,
    Thm7,
    Thm8,
    Cor1,
}

impl TestName {
    fn kind(self) -> DiffKind {
        match self {
            TestName::Thm3 => DiffKind::Thm3,
            TestName::Thm4 => DiffKind::Thm4,
            TestName::Thm5 => DiffKind::Thm5,
            TestName::Thm6 => DiffKind::Thm6,
            TestName::Thm7 => DiffKind::Thm7,
            TestName::Thm8 => DiffKind::Thm8,
            TestName::Cor1 => DiffKind::Cor1,
        }
    }
}

enum CliError {
    /// Bad argument values: exit 2.
    Usage(String),
    /// Everything the artifacts themselves cause: exit 1.
    Domain { kind: &'static str, message: String, detail: Value },
}

fn domain(kind: &'static str, message: impl ToString) -> CliError {
    CliError::Domain { kind, message: message.to_string(), detail: Value::Null }
}

type Res<T = ()> = Result<T, CliError>;

fn read<T: DeserializeOwned>(path: &Path) -> Res<T> {
    let text = std::fs::read_to_string(path).map_err(|e| domain("io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| domain("parse", format!("{}: {e}", path.display())))
}

fn write<T: Serialize>(path: &Path, value: &T) -> Res {
    let text = serde_json::to_string_pretty(value).map_err(|e| domain("serialize", e))?;
    std::fs::write(path, text + "\n").map_err(|e| domain("io", format!("{}: {e}", path.display())))
}

/// `1,2.5,-3` or a JSON array.
fn parse_reals(s: &str) -> Res<Vec<f64>> {
    let s = s.trim();
    if s.starts_with('[') {
        return serde_json::from_str(s).map_err(|e| CliError::Usage(format!("bad input `{s}`: {e}")));
    }
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(',').map(|t| real_from_str(t).map_err(CliError::Usage)).collect()
}

fn show(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn emit(json: bool, value: &Value, text: impl FnOnce() -> String) {
    if json {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn read_circuit_value(path: &Path) -> Res<Value> {
    read(path)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() && std::env::args().any(|a| a == "--json") => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let json = cli.json;
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            if json {
                eprintln!("{}", json!({ "error": "usage", "message": msg }));
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Domain { kind, message, detail }) => {
            if json {
                eprintln!("{}", json!({ "error": kind, "message": message, "detail": detail }));
            } else {
                eprintln!("error ({kind}): {message}");
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Res<ExitCode> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let json = cli.json;
    match cli.cmd {
        Cmd::Eval { circuit, input, aux } => {
            let raw = read_circuit_value(&circuit)?;
            let c: ExtendedCircuit = serde_json::from_value(raw.clone()).map_err(|e| domain("parse", e))?;
            let x = parse_reals(&input)?;
            let a = match aux {
                Some(a) => parse_reals(&a)?,
                None => match raw.get("initial_aux") {
                    Some(v) => serde_json::from_value(v.clone()).map_err(|e| domain("parse", e))?,
                    None => vec![],
                },
            };
            let report = c.validate();
            if !report.is_ok() {
                return Err(CliError::Domain {
                    kind: "validation",
                    message: "circuit is invalid".into(),
                    detail: serde_json::to_value(&report).unwrap_or_default(),
                });
            }
            let (out, _) = c.evaluate(&x, &a).map_err(|e| domain("eval", e))?;
            emit(json, &json!({ "outputs": out }), || show(&out));
        }
        Cmd::RunRec { circuit, input, budget, trace } => {
            let rec: RecurrentCircuit = read(&circuit)?;
            let x = parse_reals(&input)?;
            match rec.run(&x, budget) {
                Ok((out, t)) => {
                    let mut v = json!({ "outputs": out, "iterations": t.iterations() });
                    if trace {
                        v["trace"] = serde_json::to_value(&t).unwrap_or_default();
                    }
                    emit(json, &v, || show(&out));
                }
                Err(RunError::NonHalting { budget, trace: t }) => {
                    return Err(CliError::Domain {
                        kind: "non-halting",
                        message: format!("did not halt within {budget} iterations"),
                        detail: json!({ "budget": budget, "records": t.iterations() }),
                    })
                }
                Err(RunError::Arity { expected, got }) => {
                    return Err(CliError::Usage(format!("circuit takes {expected} inputs, got {got}")))
                }
                Err(e) => return Err(domain("run", e)),
            }
        }
        Cmd::RunGnn { gnn, graph, outer_budget } => {
            let gnn: RecCGnn = read(&gnn)?;
            let g: LabelledGraph = read(&graph)?;
            let r = run_gnn(&gnn, &g, &RunOptions { outer_budget, exec }).map_err(|e| domain("gnn", e))?;
            emit(json, &json!({ "graph": r.graph, "layers": r.layers }), || show(&r.graph.labels));
        }
        Cmd::EncodeCircuit { circuit, input, minimal_copies } => {
            let rec: RecurrentCircuit = read(&circuit)?;
            let folded = make_iteration_free(&rec);
            let copies = if minimal_copies { HaltCopies::Minimal } else { HaltCopies::Safe };
            let sym = symbolic_encode_circuit_bounded(&folded, copies, ENCODE_LIMIT).map_err(|e| domain("encode", e))?;
            let text = match input {
                Some(x) => {
                    let g = instantiate_encoding(&sym, &folded, &parse_reals(&x)?).map_err(|e| domain("encode", e))?;
                    serde_json::to_string(&g)
                }
                None => serde_json::to_string(&sym),
            };
            println!("{}", text.map_err(|e| domain("serialize", e))?);
        }
        Cmd::EncodeGraph { graph, decode } => {
            if let Some(path) = decode {
                let t: Vec<f64> = read(&path)?;
                let g = decode_graph(&t).map_err(|e| domain("decode", e))?;
                println!("{}", serde_json::to_string(&g).map_err(|e| domain("serialize", e))?);
            } else if let Some(path) = graph {
                let g: LabelledGraph = read(&path)?;
                g.validate().map_err(|e| domain("validation", e))?;
                println!("{}", serde_json::to_string(&encode_graph(&g)).map_err(|e| domain("serialize", e))?);
            }
        }
        Cmd::Compile(args) => compile(args, json)?,
        Cmd::Compose { first, second, out } => {
            let f: RecurrentCircuit = read(&first)?;
            let g: RecurrentCircuit = read(&second)?;
            let h = compose_recurrent(&f, &g).map_err(|e| domain("compose", e))?;
            write(&out, &h)?;
            let v = json!({ "size": h.underlying.size(), "inputs": h.n(), "outputs": h.m(), "aux": h.ell() });
            emit(json, &v, || format!("wrote {} ({} gates)", out.display(), h.underlying.size()));
        }
        Cmd::Difftest { test, trials, seed, trial, tolerance } => {
            let seed = match seed {
                Some(s) => s,
                None => match std::env::var("RECCIRC_SEED") {
                    Ok(s) => s.trim().parse().map_err(|_| CliError::Usage(format!("RECCIRC_SEED=`{s}` is not a seed")))?,
                    Err(_) => 0,
                },
            };
            let kind = test.kind();
            let mut cfg = DiffTestConfig::new(kind, seed, trials);
            cfg.exec = exec;
            if let Some(t) = tolerance {
                if !(t >= 0.0) {
                    return Err(CliError::Usage("tolerance must be non-negative".into()));
                }
                cfg.tolerance = t;
            }
            let report = match trial {
                Some(t) => difftest_trials(kind, &cfg, t..t + 1),
                None => difftest(kind, &cfg),
            };
            let v = serde_json::to_value(&report).map_err(|e| domain("serialize", e))?;
            emit(json, &v, || {
                let mut s = format!(
                    "{kind}: {} passed, {} failed, {} skipped of {} (seed {seed})",
                    report.passed, report.failed, report.skipped, report.trials
                );
                if let Some(f) = &report.first_failure {
                    s += &format!("\nfirst failure at trial {}: {}\nreplay: {}", f.trial, f.detail, f.replay);
                }
                s
            });
            if !report.ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Check(a) => return check(a, json),
        Cmd::ExportDot { artifact, out } => {
            let dot = if let Some(p) = artifact.circuit {
                let raw = read_circuit_value(&p)?;
                match serde_json::from_value::<RecurrentCircuit>(raw.clone()) {
                    Ok(rec) => recurrent_to_dot(&rec),
                    Err(_) => {
                        let c: ExtendedCircuit = serde_json::from_value(raw).map_err(|e| domain("parse", e))?;
                        reccirc::dot::circuit_to_dot(&c)
                    }
                }
            } else if let Some(p) = artifact.graph {
                graph_to_dot(&read::<LabelledGraph>(&p)?)
            } else {
                return Err(CliError::Usage("export-dot takes --circuit or --graph".into()));
            };
            match out {
                Some(p) => std::fs::write(&p, dot).map_err(|e| domain("io", e))?,
                None => print!("{dot}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Res<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Usage(format!("this direction needs --{flag}")))
}

fn finish_report(report: &mut CompileReport, args: &CompileArgs, json: bool) -> Res {
    if let Some(p) = &args.report {
        write(p, report)?;
    }
    let v = serde_json::to_value(&*report).map_err(|e| domain("serialize", e))?;
    if json {
        println!("{v}");
    } else {
        println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
    }
    Ok(())
}

fn compile(args: CompileArgs, json: bool) -> Res {
    let fail = |e: reccirc::compile::CompileError| domain("compile", e);
    match args.direction {
        Direction::Gnn2circ | Direction::Gnn2circInner | Direction::Gnn2circFull => {
            let gnn: RecCGnn = read(need(&args.gnn, "gnn")?)?;
            let shape: GraphShape = read(need(&args.graph_shape, "graph-shape")?)?;
            let out = need(&args.out, "out")?;
            let (rec, mut report) = match args.direction {
                Direction::Gnn2circ => compile_gnn_outer_to_circuit(&gnn, &shape),
                Direction::Gnn2circInner => compile_gnn_inner_to_circuit(&gnn, &shape),
                _ => compile_gnn_full_to_circuit(&gnn, &shape),
            }
            .map_err(fail)?;
            write(out, &rec)?;
            finish_report(&mut report, &args, json)
        }
        Direction::Circ2gnnOuter => {
            let rec: RecurrentCircuit = read(need(&args.circuit, "circuit")?)?;
            let mode = if args.global_activations { ActivationMode::Global } else { ActivationMode::Embedded };
            let art = compile_circuit_to_outer_gnn(&rec, mode).map_err(fail)?;
            write(need(&args.out_gnn, "out-gnn")?, &art.gnn)?;
            let graph_out = need(&args.out_graph, "out-graph")?;
            match &args.input {
                Some(x) => {
                    let g = instantiate_encoding(&art.graph, &art.circuit, &parse_reals(x)?)
                        .map_err(|e| domain("encode", e))?;
                    write(graph_out, &g)?;
                }
                None => write(graph_out, &art.graph)?,
            }
            let mut report = art.report.clone();
            report.notes.push(format!("output vertices {:?}", art.output_vertices()));
            report.notes.push(format!("{} layers per circuit iteration", art.schedule.period));
            finish_report(&mut report, &args, json)
        }
        Direction::Circ2gnnInner => {
            let rec: RecurrentCircuit = read(need(&args.circuit, "circuit")?)?;
            let art = compile_symmetric_circuit_to_inner_gnn(&rec, 200, 0, args.inner_budget).map_err(fail)?;
            write(need(&args.out_gnn, "out-gnn")?, &art.gnn)?;
            let graph_out = need(&args.out_graph, "out-graph")?;
            match &args.input {
                Some(x) => {
                    let g = bipartite_encode(art.n, art.m, &parse_reals(x)?).map_err(|e| domain("encode", e))?;
                    write(graph_out, &g)?;
                }
                None => write(graph_out, &art.shape)?,
            }
            let mut report = art.report.clone();
            report.notes.push(format!("inputs on vertices 0..{}, outputs on {}..{}", art.n, art.n, art.n + art.m));
            finish_report(&mut report, &args, json)
        }
    }
}

/// Largest graph `encode-circuit` will build.
const ENCODE_LIMIT: usize = 20_000_000;

/// Largest graph `check` builds to test the degree scheme of a circuit.
const CHECK_ENCODE_LIMIT: usize = 2_000_000;

fn check(a: ArtifactArgs, json: bool) -> Res<ExitCode> {
    let mut problems: Vec<String> = Vec::new();
    let mut checked: Vec<&str> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    if let Some(p) = a.circuit {
        let raw = read_circuit_value(&p)?;
        let is_rec = raw.get("rec_edges").is_some();
        if is_rec {
            let rec: RecurrentCircuit = serde_json::from_value(raw).map_err(|e| domain("parse", e))?;
            let report = rec.validate();
            problems.extend(report.violations.iter().map(|v| format!("{}: {}", v.kind.name(), v.message)));
            checked.push("validate");
            if report.is_ok() {
                let folded = make_iteration_free(&rec);
                match symbolic_encode_circuit_bounded(&folded, HaltCopies::Safe, CHECK_ENCODE_LIMIT) {
                    Ok(sym) => {
                        checked.push("degree scheme");
                        if let Err(e) = sym.check_degree_scheme() {
                            problems.push(format!("degree scheme: {e}"));
                        }
                    }
                    Err(e @ EncodeError::TooLarge { .. }) => skipped.push(format!("degree scheme: {e}")),
                    Err(e) => problems.push(format!("encoding: {e}")),
                }
            }
        } else {
            let c: ExtendedCircuit = serde_json::from_value(raw).map_err(|e| domain("parse", e))?;
            problems.extend(c.validate().violations.iter().map(|v| format!("{}: {}", v.kind.name(), v.message)));
            checked.push("validate");
        }
    } else if let Some(p) = a.gnn {
        let gnn: RecCGnn = read(&p)?;
        checked.push("validate");
        if let Err(e) = gnn.validate() {
            problems.push(e.to_string());
        } else {
            checked.push("tail symmetry");
            for (i, l) in gnn.layers.iter().enumerate() {
                if let Err(e) = l.family.check_tail_symmetry(6, 50, 0, gnn.inner_budget) {
                    problems.push(format!("tail symmetry, layer {}: {e}", i + 1));
                }
            }
        }
    } else if let Some(p) = a.graph {
        let g: LabelledGraph = read(&p)?;
        checked.push("validate");
        if let Err(e) = g.validate() {
            problems.push(e.to_string());
        }
    } else if let Some(p) = a.symbolic {
        let s: SymbolicLabelledGraph = read(&p)?;
        checked.push("degree scheme");
        if let Err(e) = s.check_degree_scheme() {
            problems.push(format!("degree scheme: {e}"));
        }
    }
    let ok = problems.is_empty();
    emit(json, &json!({ "ok": ok, "checked": checked, "skipped": skipped, "violations": problems }), || {
        let notes: String = skipped.iter().map(|s| format!("\nskipped {s}")).collect();
        if ok {
            format!("ok ({}){notes}", checked.join(", "))
        } else {
            problems.iter().map(|p| format!("violation: {p}")).collect::<Vec<_>>().join("\n")
        }
    });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
