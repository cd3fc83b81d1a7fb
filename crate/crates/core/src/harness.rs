//! Evaluation metric and the experiment drivers behind the CLI: the NB x H
//! sensitivity surface, samples-per-RP sweep, ablation, baseline comparison
//! and fingerprint truncation.
//!
//! Every driver is a pure function of its scenario and configuration; none
//! of the CSV outputs carry timing, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::edges::{
    build_ed_graph, build_gate_graph, build_knn_graph, ed_distance, ed_threshold_for_degree, gat_attention,
    Constructor, EdConfig, FingerprintGraph, GatParams, KnnConfig,
};
use crate::error::{Error, Result};
use crate::gcn::{train_on_graph, GcnModel};
use crate::model::{normalize, Ablation, Dataset, ModelConfig, NormalizedFingerprint, Split};
use crate::rtec::{infer, QueryFingerprint};
use crate::simulator::{generate_dataset, truncate_fingerprints, Scenario};

/// Hidden width of the fixed random GAT baseline projection.
pub const GAT_HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceError {
    pub device_id: String,
    pub samples: usize,
    pub mean_m: f64,
    pub worst_m: f64,
    pub best_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub rtec_ms_mean: f64,
    pub gcn_ms_mean: f64,
    pub total_ms_mean: f64,
    pub total_ms_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub per_device: Vec<DeviceError>,
    /// Spread between the worst and best device means.
    pub device_variance_m: f64,
    pub overall_mean_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    pub flop_estimate: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_hash: Option<String>,
}

impl EvalReport {
    pub fn worst_m(&self) -> f64 {
        self.per_device.iter().map(|d| d.worst_m).fold(0.0, f64::max)
    }

    pub fn device(&self, id: &str) -> Option<&DeviceError> {
        self.per_device.iter().find(|d| d.device_id == id)
    }

    pub fn without_latency(mut self) -> Self {
        self.latency = None;
        self
    }
}

/// One test outcome: `(device, predicted RP, true RP)`.
pub type Outcome = (String, usize, usize);

/// Mean absolute RP-index error per device; 1 RP = 1 m.
pub fn evaluate_outcomes(label: &str, outcomes: &[Outcome]) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut by_device: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (dev, pred, truth) in outcomes {
        by_device.entry(dev.as_str()).or_default().push(pred.abs_diff(*truth) as f64);
    }
    let per_device: Vec<DeviceError> = by_device
        .into_iter()
        .map(|(dev, errs)| DeviceError {
            device_id: dev.to_string(),
            samples: errs.len(),
            mean_m: errs.iter().sum::<f64>() / errs.len() as f64,
            worst_m: errs.iter().copied().fold(f64::MIN, f64::max),
            best_m: errs.iter().copied().fold(f64::MAX, f64::min),
        })
        .collect();
    let max = per_device.iter().map(|d| d.mean_m).fold(f64::MIN, f64::max);
    let min = per_device.iter().map(|d| d.mean_m).fold(f64::MAX, f64::min);
    let overall = outcomes.iter().map(|(_, p, t)| p.abs_diff(*t) as f64).sum::<f64>() / outcomes.len() as f64;
    Ok(EvalReport {
        label: label.to_string(),
        per_device,
        device_variance_m: max - min,
        overall_mean_m: overall,
        config: None,
        latency: None,
        flop_estimate: 0,
        train_hash: None,
        test_hash: None,
    })
}

/// Runs online inference on every test sample and scores it.
pub fn evaluate(model: &GcnModel, graph: &FingerprintGraph, ds_test: &Dataset) -> Result<EvalReport> {
    if ds_test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if ds_test.n_aps != model.n_aps {
        return Err(Error::shape(format!("test set has {} APs, model expects {}", ds_test.n_aps, model.n_aps)));
    }
    let mut outcomes = Vec::with_capacity(ds_test.len());
    let mut lat = LatencyStats::default();
    for s in &ds_test.samples {
        let q = QueryFingerprint { fingerprint: s.fingerprint.clone(), device_id: s.device_id.clone() };
        let p = infer(&q, graph, model)?;
        lat.rtec_ms_mean += p.latency.rtec_ms;
        lat.gcn_ms_mean += p.latency.gcn_ms;
        lat.total_ms_mean += p.latency.total_ms;
        lat.total_ms_max = lat.total_ms_max.max(p.latency.total_ms);
        outcomes.push((s.device_id.clone(), p.rp_id, s.rp_id));
    }
    let n = ds_test.len() as f64;
    lat.rtec_ms_mean /= n;
    lat.gcn_ms_mean /= n;
    lat.total_ms_mean /= n;
    let mut report = evaluate_outcomes(&model.config.ablation.to_string(), &outcomes)?;
    report.config = Some(model.config.clone());
    report.latency = Some(lat);
    report.flop_estimate = model.estimate_flops();
    Ok(report)
}

/// Shared settings of an experiment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub samples_per_rp: usize,
    /// Devices that contribute training data.
    pub train_devices: Vec<String>,
    /// Devices evaluated; empty means every device in the scenario.
    pub test_devices: Vec<String>,
    /// Seed of the fingerprint truncation draw.
    pub truncation_seed: u64,
    pub sqrt_ed: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            samples_per_rp: 5,
            train_devices: vec!["d0".into()],
            test_devices: Vec::new(),
            truncation_seed: 0,
            sqrt_ed: false,
        }
    }
}

/// Train and test splits for an experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn generate(sc: &Scenario, exp: &ExperimentConfig) -> Result<Self> {
        let test_devices = if exp.test_devices.is_empty() { sc.device_ids() } else { exp.test_devices.clone() };
        Ok(Splits {
            train: generate_dataset(sc, exp.samples_per_rp, &exp.train_devices, Split::Train)?,
            test: generate_dataset(sc, 1, &test_devices, Split::Test)?,
        })
    }

    pub fn truncated(&self, percent: f64, seed: u64) -> Result<Self> {
        Ok(Splits {
            train: truncate_fingerprints(&self.train, percent, seed)?,
            test: truncate_fingerprints(&self.test, percent, seed)?,
        })
    }
}

/// Builds the graph a constructor defines over the training split.
pub fn build_graph(train: &Dataset, constructor: Constructor, exp: &ExperimentConfig) -> Result<FingerprintGraph> {
    let k = exp.model.k_nb(train.n_rps);
    match constructor {
        Constructor::Gate => build_gate_graph(train, &exp.model),
        Constructor::Ed => {
            let phi_ed = ed_threshold_for_degree(train, k, exp.sqrt_ed)?;
            build_ed_graph(train, &EdConfig { phi_ed, sqrt_ed: exp.sqrt_ed })
        }
        Constructor::Knn => build_knn_graph(train, &KnnConfig { k, sqrt_ed: exp.sqrt_ed }),
        Constructor::Gat => {
            let knn = build_knn_graph(train, &KnnConfig { k, sqrt_ed: exp.sqrt_ed })?;
            gat_attention(&knn, &GatParams::random(GAT_HIDDEN, train.n_aps, exp.model.seed))
        }
    }
}

/// Trains one arm and evaluates it on the test split.
pub fn run_arm(label: &str, splits: &Splits, constructor: Constructor, exp: &ExperimentConfig) -> Result<EvalReport> {
    let graph = build_graph(&splits.train, constructor, exp)?;
    let (model, _) = train_on_graph(&splits.train, &graph, &exp.model)?;
    let mut report = evaluate(&model, &graph, &splits.test)?;
    report.label = label.to_string();
    report.train_hash = Some(splits.train.content_hash());
    report.test_hash = Some(splits.test.content_hash());
    Ok(report)
}

/// Fails unless every report saw the same train and test data.
pub fn check_same_data(reports: &[EvalReport]) -> Result<()> {
    if let Some(first) = reports.first() {
        for r in reports {
            if r.train_hash != first.train_hash || r.test_hash != first.test_hash {
                return Err(Error::config(format!(
                    "arm {:?} was evaluated on different data than {:?}",
                    r.label, first.label
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub nb_percent: f64,
    pub h_percent: f64,
    pub mean_error_m: f64,
    pub device_variance_m: f64,
}

/// Overall mean error for every `(NB, H)` pair, NB-major.
pub fn sweep_nb_h(sc: &Scenario, exp: &ExperimentConfig, nbs: &[f64], hs: &[f64]) -> Result<Vec<SweepCell>> {
    let splits = Splits::generate(sc, exp)?;
    let mut cells = Vec::with_capacity(nbs.len() * hs.len());
    for &nb in nbs {
        for &h in hs {
            let arm = ExperimentConfig {
                model: ModelConfig { nb_percent: nb, h_percent: h, ..exp.model.clone() },
                ..exp.clone()
            };
            let r = run_arm("gate", &splits, Constructor::Gate, &arm)?;
            cells.push(SweepCell {
                nb_percent: nb,
                h_percent: h,
                mean_error_m: r.overall_mean_m,
                device_variance_m: r.device_variance_m,
            });
        }
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("nb_percent,h_percent,mean_error_m,device_variance_m\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", c.nb_percent, c.h_percent, c.mean_error_m, c.device_variance_m);
    }
    out
}

/// One report per training-samples-per-RP count.
pub fn sweep_samples(sc: &Scenario, exp: &ExperimentConfig, counts: &[usize]) -> Result<Vec<(usize, EvalReport)>> {
    counts
        .iter()
        .map(|&n| {
            let arm = ExperimentConfig { samples_per_rp: n, ..exp.clone() };
            let splits = Splits::generate(sc, &arm)?;
            Ok((n, run_arm(&format!("samples={n}"), &splits, Constructor::Gate, &arm)?))
        })
        .collect()
}

pub fn samples_csv(rows: &[(usize, EvalReport)]) -> String {
    let mut out = String::from("samples_per_rp,mean_error_m,device_variance_m,worst_m\n");
    for (n, r) in rows {
        let _ = writeln!(out, "{n},{:.6},{:.6},{:.6}", r.overall_mean_m, r.device_variance_m, r.worst_m());
    }
    out
}

fn run_ablation_on(splits: &Splits, exp: &ExperimentConfig, variants: &[Ablation]) -> Result<Vec<EvalReport>> {
    let reports = variants
        .iter()
        .map(|&v| {
            let arm = ExperimentConfig { model: ModelConfig { ablation: v, ..exp.model.clone() }, ..exp.clone() };
            run_arm(v.as_str(), splits, Constructor::Gate, &arm)
        })
        .collect::<Result<Vec<_>>>()?;
    check_same_data(&reports)?;
    Ok(reports)
}

/// Trains each feature variant on identical data.
pub fn run_ablation(sc: &Scenario, exp: &ExperimentConfig, variants: &[Ablation]) -> Result<Vec<EvalReport>> {
    run_ablation_on(&Splits::generate(sc, exp)?, exp, variants)
}

/// Same network on each constructor's graph. GATE keeps the configured
/// feature layout; baselines use `[F | MSG]` since per-feature attention is
/// GATE's own addition. Optionally appends a nearest-fingerprint classifier.
pub fn run_baselines(
    sc: &Scenario,
    exp: &ExperimentConfig,
    constructors: &[Constructor],
    knn_classifier: bool,
) -> Result<Vec<EvalReport>> {
    let splits = Splits::generate(sc, exp)?;
    let mut reports = constructors
        .iter()
        .map(|&c| {
            let ablation = if c == Constructor::Gate { exp.model.ablation } else { Ablation::NoAhv };
            let arm = ExperimentConfig { model: ModelConfig { ablation, ..exp.model.clone() }, ..exp.clone() };
            run_arm(c.as_str(), &splits, c, &arm)
        })
        .collect::<Result<Vec<_>>>()?;
    if knn_classifier {
        let mut r = nearest_fingerprint_classifier(&splits.train, &splits.test)?;
        r.train_hash = Some(splits.train.content_hash());
        r.test_hash = Some(splits.test.content_hash());
        reports.push(r);
    }
    check_same_data(&reports)?;
    Ok(reports)
}

/// Predicts the RP of the training sample with the smallest mean squared
/// normalized-RSS difference.
pub fn nearest_fingerprint_classifier(train: &Dataset, test: &Dataset) -> Result<EvalReport> {
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let refs: Vec<(usize, NormalizedFingerprint)> =
        train.samples.iter().map(|s| (s.rp_id, normalize(&s.fingerprint))).collect();
    let outcomes: Vec<Outcome> = test
        .samples
        .iter()
        .map(|s| {
            let q = normalize(&s.fingerprint);
            let best = refs
                .iter()
                .map(|(rp, f)| (*rp, ed_distance(&q, f)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            (s.device_id.clone(), best.0, s.rp_id)
        })
        .collect();
    evaluate_outcomes("knn-classifier", &outcomes)
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("label,mean_error_m,worst_m,device_variance_m,flop_estimate\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{}",
            r.label,
            r.overall_mean_m,
            r.worst_m(),
            r.device_variance_m,
            r.flop_estimate
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub percent: f64,
    pub variant: Ablation,
    pub mean_error_m: f64,
    pub device_variance_m: f64,
}

/// Error of each variant as growing fractions of every RP's APs are hidden.
pub fn run_truncation(
    sc: &Scenario,
    exp: &ExperimentConfig,
    percents: &[f64],
    variants: &[Ablation],
) -> Result<Vec<TruncationRow>> {
    let base = Splits::generate(sc, exp)?;
    let mut rows = Vec::with_capacity(percents.len() * variants.len());
    for &p in percents {
        let splits = base.truncated(p, exp.truncation_seed)?;
        for r in run_ablation_on(&splits, exp, variants)? {
            rows.push(TruncationRow {
                percent: p,
                variant: r.label.parse()?,
                mean_error_m: r.overall_mean_m,
                device_variance_m: r.device_variance_m,
            });
        }
    }
    Ok(rows)
}

pub fn truncation_csv(rows: &[TruncationRow]) -> String {
    let mut out = String::from("percent,variant,mean_error_m,device_variance_m\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.percent, r.variant, r.mean_error_m, r.device_variance_m);
    }
    out
}
