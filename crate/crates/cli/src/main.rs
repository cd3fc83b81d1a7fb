use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gate_core::harness::{
    self, reports_csv, run_ablation, run_baselines, run_truncation, samples_csv, sweep_csv, sweep_nb_h,
    sweep_samples, truncation_csv, Splits,
};
use gate_core::simulator::{generate_scenario, Scenario};
use gate_core::trends::{self, TrendConfig};
use gate_core::{
    Ablation, Constructor, Dataset, ExperimentConfig, Fingerprint, FingerprintGraph, GcnModel, ModelConfig, Optimizer,
    QueryFingerprint, ScenarioSpec, Split,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gate", version, about = "Graph-attention indoor localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario plus train and test CSVs.
    Simulate(SimulateArgs),
    /// Build a graph over a training CSV and fit the network.
    Train(TrainArgs),
    /// Localize query fingerprints, one JSON line per query.
    Infer(InferArgs),
    /// Evaluate a trained model on a test CSV.
    Evaluate(EvaluateArgs),
    /// Mean error over an NB% x H% grid.
    Sweep(SweepArgs),
    /// Device variance per training-samples-per-RP count.
    Samples(SamplesArgs),
    /// Feature-variant comparison on identical data.
    Ablation(AblationArgs),
    /// Graph-constructor comparison on identical data.
    Bench(BenchArgs),
    /// Error as fingerprints are progressively truncated.
    Truncate(TruncateArgs),
    /// Per-seed trend margins used to pick acceptance tolerances.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Training samples per RP and device.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Devices in the training split.
    #[arg(long, value_delimiter = ',', default_value = "d0")]
    train_devices: Vec<String>,
    /// Single shared noise sigma instead of per-AP values.
    #[arg(long)]
    euclidean: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 10.0)]
    nb: f64,
    #[arg(long, default_value_t = 50.0)]
    h: f64,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Model initialization seed.
    #[arg(long = "model-seed", default_value_t = 0)]
    model_seed: u64,
    #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
    optimizer: Optimizer,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            nb_percent: self.nb,
            h_percent: self.h,
            learning_rate: self.lr,
            epochs: self.epochs,
            seed: self.model_seed,
            ablation: self.ablation,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.csv.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "gate")]
    constructor: Constructor,
    #[arg(long)]
    sqrt_ed: bool,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to graph.json next to the model file.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// Zero the wall-clock field so the report is reproducible.
    #[arg(long)]
    omit_latency: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// CSV with ap_* columns; rp_id and device_id are optional.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    omit_latency: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Test CSV, or a directory holding test.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    omit_latency: bool,
}

/// Scenario source plus experiment settings shared by the comparison commands.
#[derive(Args)]
struct ExpArgs {
    /// Scenario preset, ignored when --scenario is given.
    #[arg(long, default_value = "desk-dense")]
    preset: String,
    /// Scenario JSON written by `simulate`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Scenario seed; also the default model and truncation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    nb: f64,
    #[arg(long, default_value_t = 50.0)]
    h: f64,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "d0")]
    train_devices: Vec<String>,
    /// Devices evaluated; all scenario devices when omitted.
    #[arg(long, value_delimiter = ',')]
    test_devices: Vec<String>,
    #[arg(long)]
    sqrt_ed: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExpArgs {
    fn scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            Some(p) => Ok(Scenario::load(p).with_context(|| format!("loading {}", p.display()))?),
            None => Ok(generate_scenario(&ScenarioSpec::preset(&self.preset)?, self.seed)?),
        }
    }

    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                nb_percent: self.nb,
                h_percent: self.h,
                learning_rate: self.lr,
                epochs: self.epochs,
                seed: self.seed,
                ablation: self.ablation,
                optimizer: self.optimizer,
            },
            samples_per_rp: self.samples,
            train_devices: self.train_devices.clone(),
            test_devices: self.test_devices.clone(),
            truncation_seed: self.seed,
            sqrt_ed: self.sqrt_ed,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// `nb=LIST h=LIST`; either axis defaults to the configured value.
    #[arg(long, num_args = 1..=2)]
    grid: Vec<String>,
}

#[derive(Args)]
struct SamplesArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, default_value = "1,2,3,4,5")]
    counts: String,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_value = "full,no_msg,no_ahv,no_mdhv")]
    variants: Vec<Ablation>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_value = "gate,ed,knn,gat")]
    baselines: Vec<Constructor>,
    /// Append a nearest-training-fingerprint classifier row.
    #[arg(long)]
    knn_classifier: bool,
}

#[derive(Args)]
struct TruncateArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Comma list; `a,b,...,z` expands with step b-a.
    #[arg(long, default_value = "0,10,...,90")]
    percents: String,
    #[arg(long, value_delimiter = ',', default_value = "full,no_msg,no_ahv,no_mdhv")]
    variants: Vec<Ablation>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value = "desk-dense")]
    preset: String,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    match s {
        "adam" => Ok(Optimizer::Adam),
        "sgd" => Ok(Optimizer::Sgd),
        other => Err(format!("unknown optimizer {other:?} (adam, sgd)")),
    }
}

/// Parses `1,2,5` or an arithmetic `0,10,...,90`.
fn parse_list(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if let Some(pos) = parts.iter().position(|p| *p == "...") {
        if pos != 2 || parts.len() != 4 {
            bail!("range must look like a,b,...,z: {s:?}");
        }
        let a: f64 = parts[0].parse()?;
        let b: f64 = parts[1].parse()?;
        let z: f64 = parts[3].parse()?;
        let step = b - a;
        if !(step > 0.0) || z < a {
            bail!("range {s:?} must be increasing");
        }
        let n = ((z - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + step * i as f64).collect());
    }
    parts.iter().map(|p| p.parse::<f64>().with_context(|| format!("bad number {p:?}"))).collect()
}

fn parse_grid(items: &[String], nb: f64, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut nbs, mut hs) = (vec![nb], vec![h]);
    for item in items {
        let (key, list) = item.split_once('=').ok_or_else(|| anyhow!("grid axis must be key=list: {item:?}"))?;
        match key {
            "nb" => nbs = parse_list(list)?,
            "h" => hs = parse_list(list)?,
            other => bail!("unknown grid axis {other:?} (nb, h)"),
        }
    }
    Ok((nbs, hs))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = ScenarioSpec::preset(&a.preset)?;
    spec.euclidean |= a.euclidean;
    let sc = generate_scenario(&spec, a.seed)?;
    let exp = ExperimentConfig { samples_per_rp: a.samples, train_devices: a.train_devices.clone(), ..Default::default() };
    let splits = Splits::generate(&sc, &exp)?;
    fs::create_dir_all(&a.out)?;
    sc.save(a.out.join("scenario.json"))?;
    splits.train.save_csv(a.out.join("train.csv"))?;
    splits.test.save_csv(a.out.join("test.csv"))?;
    Ok(())
}

fn load_split(path: &Path, file: &str, split: Split) -> Result<Dataset> {
    let p = if path.is_dir() { path.join(file) } else { path.to_path_buf() };
    Dataset::load_csv(&p, split).with_context(|| format!("loading {}", p.display()))
}

fn train(a: &TrainArgs) -> Result<()> {
    let ds = load_split(&a.data, "train.csv", Split::Train)?;
    let exp = ExperimentConfig { model: a.model.config(), sqrt_ed: a.sqrt_ed, ..Default::default() };
    exp.model.validate()?;
    let graph = harness::build_graph(&ds, a.constructor, &exp)?;
    let (model, mut report) = gate_core::train_on_graph(&ds, &graph, &exp.model)?;
    if a.omit_latency {
        report.wall_clock_s = 0.0;
    }
    model.save(&a.out)?;
    let graph_out = a
        .graph_out
        .clone()
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new(".")).join("graph.json"));
    graph.save(&graph_out)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct InferLine {
    rp_id: usize,
    top3: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency_ms: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    low_confidence: bool,
}

/// Reads query rows keyed by their `ap_*` columns.
fn read_queries(path: &Path) -> Result<Vec<QueryFingerprint>> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let ap_cols: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("ap_")).map(|(i, _)| i).collect();
    if ap_cols.is_empty() {
        bail!("{}: no ap_ columns", path.display());
    }
    let device_col = headers.iter().position(|h| h == "device_id");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let rss = ap_cols
            .iter()
            .map(|&c| rec.get(c).unwrap_or("").trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("unparsable rss at row {row}"))?;
        let fingerprint = Fingerprint::new(rss).with_context(|| format!("row {row}"))?;
        let device_id = device_col.and_then(|c| rec.get(c)).unwrap_or("unknown").to_string();
        out.push(QueryFingerprint { fingerprint, device_id });
    }
    Ok(out)
}

fn infer(a: &InferArgs) -> Result<()> {
    let model = GcnModel::load(&a.model)?;
    let graph = FingerprintGraph::load(&a.graph)?;
    let stdout = io::stdout();
    let mut w = io::BufWriter::new(stdout.lock());
    for q in read_queries(&a.queries)? {
        let p = gate_core::infer(&q, &graph, &model)?;
        let line = InferLine {
            rp_id: p.rp_id,
            top3: p.top(3),
            latency_ms: (!a.omit_latency).then(|| p.latency_ms()),
            low_confidence: p.low_confidence,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = GcnModel::load(&a.model)?;
    let graph = FingerprintGraph::load(&a.graph)?;
    let ds = load_split(&a.data, "test.csv", Split::Test)?;
    let mut report = gate_core::evaluate(&model, &graph, &ds)?;
    report.config = Some(model.config.clone());
    report.test_hash = Some(ds.content_hash());
    if a.omit_latency {
        report = report.without_latency();
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let (nbs, hs) = parse_grid(&a.grid, a.exp.nb, a.exp.h)?;
    let cells = sweep_nb_h(&a.exp.scenario()?, &a.exp.experiment(), &nbs, &hs)?;
    emit(&a.exp.out, &sweep_csv(&cells))
}

fn samples(a: &SamplesArgs) -> Result<()> {
    let counts = parse_list(&a.counts)?
        .into_iter()
        .map(|v| if v >= 1.0 && v.fract() == 0.0 { Ok(v as usize) } else { Err(anyhow!("bad sample count {v}")) })
        .collect::<Result<Vec<_>>>()?;
    let rows = sweep_samples(&a.exp.scenario()?, &a.exp.experiment(), &counts)?;
    emit(&a.exp.out, &samples_csv(&rows))
}

fn ablation(a: &AblationArgs) -> Result<()> {
    let reports = run_ablation(&a.exp.scenario()?, &a.exp.experiment(), &a.variants)?;
    emit(&a.exp.out, &reports_csv(&reports))
}

fn bench(a: &BenchArgs) -> Result<()> {
    let reports = run_baselines(&a.exp.scenario()?, &a.exp.experiment(), &a.baselines, a.knn_classifier)?;
    emit(&a.exp.out, &reports_csv(&reports))
}

fn truncate(a: &TruncateArgs) -> Result<()> {
    let rows = run_truncation(&a.exp.scenario()?, &a.exp.experiment(), &parse_list(&a.percents)?, &a.variants)?;
    emit(&a.exp.out, &truncation_csv(&rows))
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let cfg = TrendConfig { preset: a.preset.clone(), epochs: a.epochs, ..Default::default() };
    let mut out = String::from("seed,quantity,value\n");
    let mut push = |seed: u64, name: &str, v: f64| {
        out.push_str(&format!("{seed},{name},{v:.6}\n"));
    };
    for seed in 0..a.seeds {
        let [nb10, nb100] = trends::edge_density_errors(&cfg, seed)?;
        push(seed, "nb10_mean", nb10);
        push(seed, "nb100_mean", nb100);
        let [v1, v5] = trends::sample_count_variances(&cfg, seed)?;
        push(seed, "samples1_variance", v1);
        push(seed, "samples5_variance", v5);
        let abl = trends::ablation_errors(&cfg, seed)?;
        for (v, e) in Ablation::ALL.iter().zip(abl) {
            push(seed, &format!("{v}_mean"), e);
        }
        let base = trends::constructor_errors(&cfg, seed)?;
        for (c, e) in ["gate", "gat", "ed", "knn"].iter().zip(base) {
            push(seed, &format!("{c}_mean"), e);
        }
        let (curve, full60) = trends::truncation_errors(&cfg, seed)?;
        for (p, e) in trends::TRUNCATION_LEVELS.iter().zip(curve) {
            push(seed, &format!("no_ahv_trunc{p}_mean"), e);
        }
        push(seed, "full_trunc60_mean", full60);
        eprintln!("seed {seed} done");
    }
    emit(&a.out, &out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::Infer(a) => infer(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Samples(a) => samples(&a),
        Command::Ablation(a) => ablation(&a),
        Command::Bench(a) => bench(&a),
        Command::Truncate(a) => truncate(&a),
        Command::Calibrate(a) => calibrate(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
