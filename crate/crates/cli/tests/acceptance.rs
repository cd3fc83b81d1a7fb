//! Acceptance criteria A1-A10, one PASS/FAIL line each.
//!
//! Runs without the libtest harness: `cargo test -p gate-cli --test acceptance`.
//! Exits nonzero if any criterion fails.

#[path = "../../core/tests/brute_force.rs"]
#[allow(dead_code)]
mod brute_force;
#[path = "../../core/tests/gradcheck.rs"]
mod gradcheck;
#[path = "../../core/tests/properties.rs"]
mod properties;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gate_core::harness::{build_graph, Splits};
use gate_core::simulator::generate_scenario;
use gate_core::trends::{self, mean_over_seeds, TrendConfig, TRUNCATION_LEVELS};
use gate_core::{
    evaluate, infer, train_on_graph, Constructor, Dataset, ExperimentConfig, FingerprintGraph, GcnModel, ModelConfig,
    QueryFingerprint, ScenarioSpec, Split,
};

/// Slack on every multi-seed trend comparison, in meters.
const TREND_TOL_M: f64 = 0.25;
const TREND_SEEDS: u64 = 5;

type Outcome = Result<String, String>;

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        }
    }
}

fn within(limit_s: f64, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed().as_secs_f64();
    if t < limit_s {
        Ok(format!("{detail} in {t:.1}s"))
    } else {
        Err(format!("{detail} but took {t:.1}s (limit {limit_s}s)"))
    }
}

fn a1() -> Outcome {
    let start = Instant::now();
    properties::attention_is_bounded_symmetric_and_scale_invariant();
    properties::ahv_columns_sum_to_attention();
    properties::msg_is_linear_in_weights();
    properties::softmax_outputs_are_distributions();
    brute_force::gate_graph_matches_reference();
    brute_force::ed_graph_matches_reference();
    brute_force::ed_graph_four_nodes_two_edges();
    brute_force::knn_graph_matches_reference();
    brute_force::constructors_are_deterministic();
    brute_force::mdhv_matches_scalar_reference();
    brute_force::ahv_columns_sum_to_edge_weights();
    within(30.0, start, "4 property suites and 7 brute-force checks green".into())
}

fn a2() -> Outcome {
    let start = Instant::now();
    gradcheck::analytic_gradients_match_central_differences();
    within(60.0, start, "120 random models, every coordinate rel err < 1e-4".into())
}

struct Converged {
    model: GcnModel,
    graph: FingerprintGraph,
    train: Dataset,
}

fn a3() -> (Outcome, Option<Converged>) {
    let start = Instant::now();
    let run = || -> gate_core::Result<(f64, f64, Converged)> {
        let sc = generate_scenario(&ScenarioSpec::preset("toy")?, 0)?;
        let exp = ExperimentConfig {
            model: ModelConfig { nb_percent: 10.0, h_percent: 50.0, epochs: 1000, ..Default::default() },
            ..Default::default()
        };
        let splits = Splits::generate(&sc, &exp)?;
        let graph = build_graph(&splits.train, Constructor::Gate, &exp)?;
        let (model, report) = train_on_graph(&splits.train, &graph, &exp.model)?;
        let eval = evaluate(&model, &graph, &splits.test)?;
        Ok((report.train_accuracy, eval.overall_mean_m, Converged { model, graph, train: splits.train }))
    };
    match run() {
        Err(e) => (Err(e.to_string()), None),
        Ok((acc, err, conv)) => {
            let detail = format!("train accuracy {acc:.3} (>= 0.95), test error {err:.3} m (<= 1.0)");
            let outcome = if acc >= 0.95 && err <= 1.0 { within(180.0, start, detail) } else { Err(detail) };
            (outcome, Some(conv))
        }
    }
}

fn a4(conv: Option<&Converged>) -> Outcome {
    let c = conv.ok_or("no A3 model")?;
    let mut hits = 0usize;
    for s in &c.train.samples {
        let q = QueryFingerprint { fingerprint: s.fingerprint.clone(), device_id: s.device_id.clone() };
        if infer(&q, &c.graph, &c.model).map_err(|e| e.to_string())?.rp_id == s.rp_id {
            hits += 1;
        }
    }
    let frac = hits as f64 / c.train.len() as f64;
    let detail = format!("{hits}/{} training fingerprints recovered ({:.1}%, need >= 95%)", c.train.len(), 100.0 * frac);
    if frac >= 0.95 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn per_seed<const K: usize>(f: impl Fn(u64) -> gate_core::Result<[f64; K]>) -> Result<[f64; K], String> {
    let rows = (0..TREND_SEEDS).map(f).collect::<gate_core::Result<Vec<_>>>().map_err(|e| e.to_string())?;
    Ok(mean_over_seeds(&rows))
}

/// `lhs <= rhs + tol`, rendered for the report.
fn leq(name_l: &str, lhs: f64, name_r: &str, rhs: f64) -> (bool, String) {
    (lhs <= rhs + TREND_TOL_M, format!("{name_l} {lhs:.3} <= {name_r} {rhs:.3} + {TREND_TOL_M}"))
}

fn verdict(checks: &[(bool, String)]) -> Outcome {
    let text = checks.iter().map(|(_, s)| s.as_str()).collect::<Vec<_>>().join("; ");
    if checks.iter().all(|(ok, _)| *ok) {
        Ok(text)
    } else {
        let failed: Vec<&str> = checks.iter().filter(|(ok, _)| !ok).map(|(_, s)| s.as_str()).collect();
        Err(format!("{text} | violated: {}", failed.join("; ")))
    }
}

fn a5(cfg: &TrendConfig) -> Outcome {
    let [nb10, nb100] = per_seed(|s| trends::edge_density_errors(cfg, s))?;
    verdict(&[leq("err(NB=10%)", nb10, "err(NB=100%)", nb100)])
}

fn a6(cfg: &TrendConfig) -> Outcome {
    let [v1, v5] = per_seed(|s| trends::sample_count_variances(cfg, s))?;
    verdict(&[leq("var(5/RP)", v5, "var(1/RP)", v1)])
}

fn a7(cfg: &TrendConfig) -> Outcome {
    let [full, no_msg, no_ahv, no_mdhv] = per_seed(|s| trends::ablation_errors(cfg, s))?;
    verdict(&[
        leq("full", full, "no_msg", no_msg),
        leq("full", full, "no_ahv", no_ahv),
        leq("full", full, "no_mdhv", no_mdhv),
    ])
}

fn a8(cfg: &TrendConfig) -> Outcome {
    let [gate, gat, ed, knn] = per_seed(|s| trends::constructor_errors(cfg, s))?;
    verdict(&[leq("gate", gate, "gat", gat), leq("gat", gat, "ed", ed), leq("gat", gat, "knn", knn)])
}

fn a9(cfg: &TrendConfig) -> Outcome {
    let rows = per_seed(|s| {
        let (curve, full60) = trends::truncation_errors(cfg, s)?;
        Ok([curve[0], curve[1], curve[2], curve[3], full60])
    })?;
    let mut checks = Vec::new();
    for i in 1..TRUNCATION_LEVELS.len() {
        let prev = format!("no_ahv@{}%", TRUNCATION_LEVELS[i - 1]);
        let cur = format!("no_ahv@{}%", TRUNCATION_LEVELS[i]);
        checks.push(leq(&prev, rows[i - 1], &cur, rows[i]));
    }
    checks.push(leq("full@60%", rows[4], "no_ahv@60%", rows[3]));
    verdict(&checks)
}

fn gate_cmd(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gate")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("gate {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Every artifact one full CLI pass produces, in a fixed order.
fn cli_pass(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let data = root.join("data");
    let (d, m, g) = (data.to_str().unwrap(), root.join("model.json"), root.join("graph.json"));
    let (m, g) = (m.to_str().unwrap(), g.to_str().unwrap());
    let test = data.join("test.csv");
    let mut out = Vec::new();
    gate_cmd(&["simulate", "--preset", "desk-sparse", "--seed", "3", "--out", d])?;
    for f in ["scenario.json", "train.csv", "test.csv"] {
        out.push((f.to_string(), fs::read(data.join(f)).map_err(|e| e.to_string())?));
    }
    let common = ["--epochs", "30"];
    let mut train = vec!["train", "--data", d, "--out", m, "--omit-latency"];
    train.extend(common);
    out.push(("train".into(), gate_cmd(&train)?));
    out.push(("model.json".into(), fs::read(m).map_err(|e| e.to_string())?));
    out.push(("graph.json".into(), fs::read(g).map_err(|e| e.to_string())?));
    let q = test.to_str().unwrap();
    out.push(("infer".into(), gate_cmd(&["infer", "--model", m, "--graph", g, "--queries", q, "--omit-latency"])?));
    out.push(("evaluate".into(), gate_cmd(&["evaluate", "--model", m, "--graph", g, "--data", d, "--omit-latency"])?));
    let sc = data.join("scenario.json");
    let sc = sc.to_str().unwrap();
    let runs: [(&str, Vec<&str>); 5] = [
        ("sweep", vec!["sweep", "--grid", "nb=5,20", "h=25,75"]),
        ("samples", vec!["samples", "--counts", "1,3"]),
        ("ablation", vec!["ablation"]),
        ("bench", vec!["bench", "--knn-classifier"]),
        ("truncate", vec!["truncate", "--percents", "0,30,60", "--variants", "full,no_ahv"]),
    ];
    for (name, mut args) in runs {
        args.extend(["--scenario", sc, "--seed", "3"]);
        args.extend(common);
        out.push((name.into(), gate_cmd(&args)?));
    }
    Ok(out)
}

fn round_trips(root: &Path) -> Result<(), String> {
    let err = |e: gate_core::Error| e.to_string();
    let data = root.join("data");
    let train = Dataset::load_csv(data.join("train.csv"), Split::Train).map_err(err)?;
    let copy = root.join("copy.csv");
    train.save_csv(&copy).map_err(err)?;
    if fs::read(&copy).unwrap() != fs::read(data.join("train.csv")).unwrap() {
        return Err("dataset CSV changed on load/save".into());
    }
    if Dataset::load_csv(&copy, Split::Train).map_err(err)? != train {
        return Err("dataset differs after round trip".into());
    }
    let model = GcnModel::load(root.join("model.json")).map_err(err)?;
    let back = GcnModel::from_json(&model.to_json().map_err(err)?).map_err(err)?;
    let bits = |m: &GcnModel| m.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    if back != model || bits(&back) != bits(&model) {
        return Err("model weights not bit-exact after round trip".into());
    }
    let graph = FingerprintGraph::load(root.join("graph.json")).map_err(err)?;
    if FingerprintGraph::from_json(&graph.to_json().map_err(err)?).map_err(err)? != graph {
        return Err("graph differs after round trip".into());
    }
    Ok(())
}

fn a10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    let first = cli_pass(&r1)?;
    let second = cli_pass(&r2)?;
    let differing: Vec<&str> =
        first.iter().zip(&second).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.as_str()).collect();
    if !differing.is_empty() {
        return Err(format!("re-run changed: {}", differing.join(", ")));
    }
    round_trips(&r1)?;
    Ok(format!("{} CLI outputs byte-identical across re-runs; dataset, model and graph round-trips bit-exact", first.len()))
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, o: Outcome| {
        match &o {
            Ok(d) => println!("{id} PASS {d}"),
            Err(d) => println!("{id} FAIL {d}"),
        }
        results.push((id, o));
    };
    report("A1", guarded(a1));
    report("A2", guarded(a2));
    let (o3, conv) = a3();
    report("A3", o3);
    report("A4", guarded(|| a4(conv.as_ref())));
    let cfg = TrendConfig::default();
    report("A5", guarded(|| a5(&cfg)));
    report("A6", guarded(|| a6(&cfg)));
    report("A7", guarded(|| a7(&cfg)));
    report("A8", guarded(|| a8(&cfg)));
    report("A9", guarded(|| a9(&cfg)));
    report("A10", guarded(a10));
    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(id, _)| *id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
