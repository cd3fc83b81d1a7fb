//! Graph-convolution classifier over per-sample feature matrices.
//!
//! Architecture, for an `N x C` input `X` (rows are access points):
//!
//! ```text
//! H1[r] = ReLU(W1 X[r] + b1)      W1: C  x C   (kernel-1 convolution)
//! H2[r] = ReLU(W2 H1[r] + b2)     W2: C2 x C   (C2 = max(1, round((1 - H%) C)))
//! p     = softmax(Wfc vec(H2) + bfc)           (vec = row-major flatten)
//! ```
//!
//! Gradients are derived by hand; `tests/gradcheck.rs` compares them with
//! central finite differences.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edges::{build_gate_graph, softmax, FingerprintGraph};
use crate::error::{Error, Result};
use crate::mdhv::{sample_mdhv, Mdhv};
use crate::model::{normalize, Ablation, Dataset, ModelConfig};
use crate::rng::seeded_rng;

pub use crate::model::Optimizer;

pub const MODEL_FILE_VERSION: u32 = 1;
/// Probabilities are floored here before taking the log.
/// Initialization attempts before training proceeds with a dead network.
pub const MAX_INIT_DRAWS: usize = 32;
pub const PROB_FLOOR: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub config: ModelConfig,
    pub n_aps: usize,
    pub n_rps: usize,
    /// Input channels (feature-matrix columns).
    pub c_in: usize,
    /// Channels after compression.
    pub c_mid: usize,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

/// Same layout as the model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &GcnModel) -> Self {
        Gradients {
            conv1_w: vec![0.0; m.conv1_w.len()],
            conv1_b: vec![0.0; m.conv1_b.len()],
            conv2_w: vec![0.0; m.conv2_w.len()],
            conv2_b: vec![0.0; m.conv2_b.len()],
            fc_w: vec![0.0; m.fc_w.len()],
            fc_b: vec![0.0; m.fc_b.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.fc_w, &self.fc_b]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Compressed channel count for `c` input channels.
pub fn compressed_channels(c: usize, h_percent: f64) -> usize {
    (((1.0 - h_percent / 100.0) * c as f64).round() as usize).max(1)
}

struct Activations {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    probs: Vec<f64>,
}

impl GcnModel {
    /// Glorot-uniform weights and zero biases drawn from `config.seed`.
    pub fn init(config: &ModelConfig, n_aps: usize, n_rps: usize, c_in: usize) -> Self {
        Self::init_from(&mut seeded_rng(config.seed), config, n_aps, n_rps, c_in)
    }

    fn init_from(rng: &mut ChaCha8Rng, config: &ModelConfig, n_aps: usize, n_rps: usize, c_in: usize) -> Self {
        let c_mid = compressed_channels(c_in, config.h_percent);
        let mut glorot = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-lim..=lim)).collect()
        };
        let conv1_w = glorot(c_in, c_in);
        let conv2_w = glorot(c_in, c_mid);
        let fc_w = glorot(n_aps * c_mid, n_rps);
        GcnModel {
            config: config.clone(),
            n_aps,
            n_rps,
            c_in,
            c_mid,
            conv1_w,
            conv1_b: vec![0.0; c_in],
            conv2_w,
            conv2_b: vec![0.0; c_mid],
            fc_w,
            fc_b: vec![0.0; n_rps],
        }
    }

    /// An all-zero model of the given dimensions.
    pub fn zeros(config: &ModelConfig, n_aps: usize, n_rps: usize, c_in: usize) -> Self {
        let c_mid = compressed_channels(c_in, config.h_percent);
        GcnModel {
            config: config.clone(),
            n_aps,
            n_rps,
            c_in,
            c_mid,
            conv1_w: vec![0.0; c_in * c_in],
            conv1_b: vec![0.0; c_in],
            conv2_w: vec![0.0; c_mid * c_in],
            conv2_b: vec![0.0; c_mid],
            fc_w: vec![0.0; n_rps * n_aps * c_mid],
            fc_b: vec![0.0; n_rps],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.fc_w, &self.fc_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn count_params(&self) -> usize {
        let (c, c2, n) = (self.c_in, self.c_mid, self.n_aps);
        c * c + c + c2 * c + c2 + self.n_rps * n * c2 + self.n_rps
    }

    /// Twice the multiply-accumulate count of one online inference: query
    /// scoring, MSG and AHV assembly, then the network forward pass.
    pub fn estimate_flops(&self) -> u64 {
        let (c, c2, n, r) = (self.c_in as u64, self.c_mid as u64, self.n_aps as u64, self.n_rps as u64);
        let ablation = self.config.ablation;
        let k = self.config.k_nb(self.n_rps) as u64;
        let mut macs = n * c * c + n * c2 * c + r * n * c2;
        if ablation != Ablation::NoMdhv {
            macs += r * n + n;
            if ablation.uses_msg() {
                macs += k * n;
            }
            if ablation.uses_ahv() {
                macs += k * n;
            }
        }
        2 * macs
    }

    fn check_input(&self, x: &Mdhv) -> Result<()> {
        if x.rows != self.n_aps || x.cols != self.c_in {
            return Err(Error::shape(format!(
                "feature matrix is {}x{}, model expects {}x{}",
                x.rows, x.cols, self.n_aps, self.c_in
            )));
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let (n, c, c2) = (self.n_aps, self.c_in, self.c_mid);
        let mut z1 = vec![0.0; n * c];
        let mut h1 = vec![0.0; n * c];
        let mut z2 = vec![0.0; n * c2];
        let mut h2 = vec![0.0; n * c2];
        for r in 0..n {
            let xr = &x[r * c..(r + 1) * c];
            for o in 0..c {
                let w = &self.conv1_w[o * c..(o + 1) * c];
                let z = self.conv1_b[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                z1[r * c + o] = z;
                h1[r * c + o] = z.max(0.0);
            }
            let hr = &h1[r * c..(r + 1) * c];
            for o in 0..c2 {
                let w = &self.conv2_w[o * c..(o + 1) * c];
                let z = self.conv2_b[o] + w.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>();
                z2[r * c2 + o] = z;
                h2[r * c2 + o] = z.max(0.0);
            }
        }
        let width = n * c2;
        let logits: Vec<f64> = (0..self.n_rps)
            .map(|k| {
                let w = &self.fc_w[k * width..(k + 1) * width];
                self.fc_b[k] + w.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Activations { z1, h1, z2, h2, probs: softmax(&logits) }
    }

    /// Class probabilities for one feature matrix.
    pub fn forward(&self, x: &Mdhv) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(&x.gcn_input()).probs)
    }

    /// True if some compressed unit is positive for some row of some input.
    pub fn any_unit_active(&self, inputs: &[Vec<f64>]) -> bool {
        inputs.iter().any(|x| self.activations(x).h2.iter().any(|&v| v > 0.0))
    }

    pub(crate) fn forward_input(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).probs
    }

    /// Analytic gradient of `loss(forward(x), true_rp)`.
    pub fn backward(&self, x: &Mdhv, true_rp: usize) -> Result<Gradients> {
        self.check_input(x)?;
        if true_rp >= self.n_rps {
            return Err(Error::shape(format!("class {true_rp} out of range")));
        }
        let mut grads = Gradients::zeros_like(self);
        self.accumulate(&x.gcn_input(), true_rp, &mut grads);
        Ok(grads)
    }

    /// Adds this sample's gradient into `g` and returns its loss.
    fn accumulate(&self, x: &[f64], true_rp: usize, g: &mut Gradients) -> f64 {
        let (n, c, c2) = (self.n_aps, self.c_in, self.c_mid);
        let act = self.activations(x);
        let width = n * c2;

        let mut d_logits = act.probs.clone();
        d_logits[true_rp] -= 1.0;

        let mut d_h2 = vec![0.0; width];
        for (k, &dl) in d_logits.iter().enumerate() {
            g.fc_b[k] += dl;
            if dl == 0.0 {
                continue;
            }
            let w = &self.fc_w[k * width..(k + 1) * width];
            let gw = &mut g.fc_w[k * width..(k + 1) * width];
            for i in 0..width {
                gw[i] += dl * act.h2[i];
                d_h2[i] += dl * w[i];
            }
        }

        let mut d_h1 = vec![0.0; c];
        for r in 0..n {
            d_h1.iter_mut().for_each(|v| *v = 0.0);
            let h1r = &act.h1[r * c..(r + 1) * c];
            for o in 0..c2 {
                if act.z2[r * c2 + o] <= 0.0 {
                    continue;
                }
                let dz = d_h2[r * c2 + o];
                g.conv2_b[o] += dz;
                let w = &self.conv2_w[o * c..(o + 1) * c];
                let gw = &mut g.conv2_w[o * c..(o + 1) * c];
                for i in 0..c {
                    gw[i] += dz * h1r[i];
                    d_h1[i] += dz * w[i];
                }
            }
            let xr = &x[r * c..(r + 1) * c];
            for o in 0..c {
                if act.z1[r * c + o] <= 0.0 {
                    continue;
                }
                let dz = d_h1[o];
                g.conv1_b[o] += dz;
                let gw = &mut g.conv1_w[o * c..(o + 1) * c];
                for i in 0..c {
                    gw[i] += dz * xr[i];
                }
            }
        }
        loss(&act.probs, true_rp).expect("class index checked by caller")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelFile(format!("corrupt model file: {e}")))?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Sparse categorical cross-entropy, `-ln(max(p[true], 1e-12))`.
pub fn loss(probs: &[f64], true_rp: usize) -> Result<f64> {
    let p = probs
        .get(true_rp)
        .ok_or_else(|| Error::shape(format!("class {true_rp} out of range for {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    config: ModelConfig,
    n_aps: usize,
    n_rps: usize,
    conv1_w: Vec<Vec<f64>>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<Vec<f64>>,
    conv2_b: Vec<f64>,
    fc_w: Vec<Vec<f64>>,
    fc_b: Vec<f64>,
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width.max(1)).map(<[f64]>::to_vec).collect()
}

fn flatten(m: Vec<Vec<f64>>, n_rows: usize, width: usize, name: &str) -> Result<Vec<f64>> {
    if m.len() != n_rows || m.iter().any(|r| r.len() != width) {
        return Err(Error::ModelFile(format!("{name} must be {n_rows}x{width}")));
    }
    Ok(m.into_iter().flatten().collect())
}

impl From<&GcnModel> for ModelFile {
    fn from(m: &GcnModel) -> Self {
        ModelFile {
            version: MODEL_FILE_VERSION,
            config: m.config.clone(),
            n_aps: m.n_aps,
            n_rps: m.n_rps,
            conv1_w: rows(&m.conv1_w, m.c_in),
            conv1_b: m.conv1_b.clone(),
            conv2_w: rows(&m.conv2_w, m.c_in),
            conv2_b: m.conv2_b.clone(),
            fc_w: rows(&m.fc_w, m.n_aps * m.c_mid),
            fc_b: m.fc_b.clone(),
        }
    }
}

impl TryFrom<ModelFile> for GcnModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_FILE_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported model version {} (expected {MODEL_FILE_VERSION})",
                f.version
            )));
        }
        f.config.validate()?;
        let c_in = f.conv1_b.len();
        let c_mid = f.conv2_b.len();
        if c_in == 0 || c_mid != compressed_channels(c_in, f.config.h_percent) {
            return Err(Error::ModelFile(format!(
                "channel counts {c_in}/{c_mid} disagree with h_percent {}",
                f.config.h_percent
            )));
        }
        if f.fc_b.len() != f.n_rps {
            return Err(Error::ModelFile("fc_b length differs from n_rps".into()));
        }
        let model = GcnModel {
            conv1_w: flatten(f.conv1_w, c_in, c_in, "conv1_w")?,
            conv2_w: flatten(f.conv2_w, c_mid, c_in, "conv2_w")?,
            fc_w: flatten(f.fc_w, f.n_rps, f.n_aps * c_mid, "fc_w")?,
            config: f.config,
            n_aps: f.n_aps,
            n_rps: f.n_rps,
            c_in,
            c_mid,
            conv1_b: f.conv1_b,
            conv2_b: f.conv2_b,
            fc_b: f.fc_b,
        };
        if model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::ModelFile("non-finite weight".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub wall_clock_s: f64,
    pub flop_estimate: u64,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamState {
    fn new(model: &GcnModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, model: &mut GcnModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((w, g), m), v) in model.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v)
        {
            for i in 0..w.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Precomputed network inputs for a training set.
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub c_in: usize,
}

/// One feature matrix per training sample: the sample itself is the center
/// and the graph neighbors of its RP supply MSG and AHV.
pub fn training_set(ds: &Dataset, graph: &FingerprintGraph, ablation: Ablation) -> Result<TrainingSet> {
    let c_in = ablation.columns(graph.k_nb());
    let mut inputs = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let m = sample_mdhv(graph, &normalize(&s.fingerprint), s.rp_id, ablation)?;
        debug_assert_eq!(m.cols, c_in);
        inputs.push(m.gcn_input());
        labels.push(s.rp_id);
    }
    Ok(TrainingSet { inputs, labels, c_in })
}

/// Full-batch training on an existing graph.
pub fn train_on_graph(ds: &Dataset, graph: &FingerprintGraph, cfg: &ModelConfig) -> Result<(GcnModel, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if ds.n_rps != graph.n_nodes() || ds.n_aps != graph.n_aps() {
        return Err(Error::shape(format!(
            "dataset is {} RPs x {} APs, graph is {} x {}",
            ds.n_rps,
            ds.n_aps,
            graph.n_nodes(),
            graph.n_aps()
        )));
    }
    let start = Instant::now();
    let set = training_set(ds, graph, cfg.ablation)?;
    let mut rng = seeded_rng(cfg.seed);
    let mut model = GcnModel::init_from(&mut rng, cfg, ds.n_aps, ds.n_rps, set.c_in);
    // With nonnegative inputs a draw can leave every compressed unit at zero
    // on every sample; no gradient then reaches the conv layers, so redraw.
    for _ in 1..MAX_INIT_DRAWS {
        if model.any_unit_active(&set.inputs) {
            break;
        }
        model = GcnModel::init_from(&mut rng, cfg, ds.n_aps, ds.n_rps, set.c_in);
    }
    let mut adam = AdamState::new(&model);
    let inv_batch = 1.0 / set.inputs.len() as f64;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut grads = Gradients::zeros_like(&model);
        let mut total = 0.0;
        for (x, &y) in set.inputs.iter().zip(&set.labels) {
            total += model.accumulate(x, y, &mut grads);
        }
        grads.scale(inv_batch);
        losses.push(total * inv_batch);
        match cfg.optimizer {
            Optimizer::Adam => adam.step(&mut model, &grads, cfg.learning_rate),
            Optimizer::Sgd => {
                for (w, g) in model.tensors_mut().into_iter().zip(grads.tensors()) {
                    w.iter_mut().zip(g).for_each(|(w, g)| *w -= cfg.learning_rate * g);
                }
            }
        }
    }
    let correct = set
        .inputs
        .iter()
        .zip(&set.labels)
        .filter(|(x, &y)| argmax(&model.forward_input(x)) == y)
        .count();
    let report = TrainReport {
        losses,
        train_accuracy: correct as f64 * inv_batch,
        wall_clock_s: start.elapsed().as_secs_f64(),
        flop_estimate: model.estimate_flops(),
    };
    Ok((model, report))
}

/// Builds the GATE graph from the training split and trains on it.
pub fn train(ds: &Dataset, cfg: &ModelConfig) -> Result<(GcnModel, FingerprintGraph, TrainReport)> {
    let graph = build_gate_graph(ds, cfg)?;
    let (model, report) = train_on_graph(ds, &graph, cfg)?;
    Ok((model, graph, report))
}

/// Index of the largest entry, ties to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}
