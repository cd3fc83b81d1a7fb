//! Fingerprint-graph construction.
//!
//! Four constructors share one graph type:
//!
//! * `gate`: path adjacency `(i, i±1)` plus the `k_nb` nodes with the highest
//!   cosine attention, weighted by that attention score.
//! * `ed`: an edge wherever the mean squared RSS difference is below a
//!   threshold, uniform weights.
//! * `knn`: the `k` lowest-distance nodes, uniform weights.
//! * `gat`: a `knn` topology re-weighted by a fixed random single-head
//!   softmax attention.
//!
//! All rankings break ties toward the lower node index, and every edge list
//! is kept sorted by neighbor index, so construction is fully deterministic.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize, Dataset, ModelConfig, NormalizedFingerprint};
use crate::rng::seeded_rng;

/// Scale applied to normalized RSS before it enters a learned map.
pub const FEATURE_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constructor {
    Gate,
    Ed,
    Knn,
    Gat,
}

impl Constructor {
    pub const ALL: [Constructor; 4] = [Constructor::Gate, Constructor::Ed, Constructor::Knn, Constructor::Gat];

    pub fn as_str(self) -> &'static str {
        match self {
            Constructor::Gate => "gate",
            Constructor::Ed => "ed",
            Constructor::Knn => "knn",
            Constructor::Gat => "gat",
        }
    }
}

impl fmt::Display for Constructor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Constructor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gate" => Ok(Constructor::Gate),
            "ed" => Ok(Constructor::Ed),
            "knn" => Ok(Constructor::Knn),
            "gat" => Ok(Constructor::Gat),
            other => Err(Error::config(format!("unknown edge constructor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub neighbor: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdConfig {
    pub phi_ed: f64,
    #[serde(default)]
    pub sqrt_ed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    #[serde(default)]
    pub sqrt_ed: bool,
}

/// Single-head attention parameters: `w` is `d x n` row-major, `a` has `2d`
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    pub d: usize,
    pub n: usize,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub leaky_slope: f64,
}

impl GatParams {
    /// Glorot-uniform initialization from `seed`; held fixed afterwards.
    pub fn random(d: usize, n: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed ^ 0x6761_745f_7061_7261);
        let lim_w = (6.0 / (d + n) as f64).sqrt();
        let lim_a = (6.0 / (2 * d + 1) as f64).sqrt();
        let w = (0..d * n).map(|_| rng.random_range(-lim_w..=lim_w)).collect();
        let a = (0..2 * d).map(|_| rng.random_range(-lim_a..=lim_a)).collect();
        GatParams { d, n, w, a, leaky_slope: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.d * self.n || self.a.len() != 2 * self.d {
            return Err(Error::shape("GAT parameter dimensions"));
        }
        if self.w.iter().chain(&self.a).any(|v| !v.is_finite()) {
            return Err(Error::config("GAT parameters must be finite"));
        }
        Ok(())
    }

    fn project(&self, f: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(f).map(|(w, x)| w * x * FEATURE_SCALE).sum())
            .collect()
    }

    /// LeakyReLU(a · [W fi || W fj]).
    pub fn logit(&self, fi: &[f64], fj: &[f64]) -> f64 {
        let (a_left, a_right) = self.a.split_at(self.d);
        let z: f64 = dot(a_left, &self.project(fi)) + dot(a_right, &self.project(fj));
        if z >= 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    /// Softmax of the logits of `center` against each neighbor.
    pub fn softmax_weights(&self, center: &[f64], neighbors: &[&[f64]]) -> Vec<f64> {
        let logits: Vec<f64> = neighbors.iter().map(|fj| self.logit(center, fj)).collect();
        softmax(&logits)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two normalized fingerprints. An all-zero operand
/// carries no information and scores 0.
pub fn attention_score(fi: &NormalizedFingerprint, fj: &NormalizedFingerprint) -> f64 {
    cosine(fi.values(), fj.values())
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Mean squared difference `(1/N) Σ (fi[k] - fj[k])²`.
pub fn ed_distance(fi: &NormalizedFingerprint, fj: &NormalizedFingerprint) -> f64 {
    mean_sq_diff(fi.values(), fj.values())
}

/// [`ed_distance`], optionally followed by a square root.
pub fn ed_distance_with(fi: &NormalizedFingerprint, fj: &NormalizedFingerprint, sqrt_ed: bool) -> f64 {
    let d = ed_distance(fi, fj);
    if sqrt_ed {
        d.sqrt()
    } else {
        d
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Descending by score, ties toward the lower index.
pub(crate) fn by_score_desc(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Ascending by distance, ties toward the lower index.
pub(crate) fn by_dist_asc(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Everything a graph needs to attach a new fingerprint later on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Neighbor count used for feature assembly.
    pub k_nb: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_ed: Option<f64>,
    #[serde(default)]
    pub sqrt_ed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gat: Option<GatParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintGraph {
    /// One normalized mean fingerprint per RP.
    pub node_features: Vec<NormalizedFingerprint>,
    /// Out-edges per node, sorted by neighbor index.
    pub edges: Vec<Vec<Edge>>,
    pub tag: Constructor,
    pub params: GraphParams,
}

impl FingerprintGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.len()
    }

    pub fn n_aps(&self) -> usize {
        self.node_features.first().map_or(0, |f| f.len())
    }

    pub fn k_nb(&self) -> usize {
        self.params.k_nb
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Nodes with no outgoing edge.
    pub fn isolated_nodes(&self) -> usize {
        self.edges.iter().filter(|e| e.is_empty()).count()
    }

    pub fn neighbor_ids(&self, node: usize) -> Vec<usize> {
        self.edges[node].iter().map(|e| e.neighbor).collect()
    }

    /// Edge set as `(i, j, weight)` triples in node-then-neighbor order.
    pub fn edge_triples(&self) -> Vec<(usize, usize, f64)> {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(i, es)| es.iter().map(move |e| (i, e.neighbor, e.weight)))
            .collect()
    }

    /// Weights this graph's constructor assigns between an arbitrary center
    /// fingerprint (a training sample or a query) and the given nodes.
    pub fn neighbor_weights(&self, center: &NormalizedFingerprint, ids: &[usize]) -> Vec<f64> {
        match self.tag {
            Constructor::Gate => ids
                .iter()
                .map(|&j| attention_score(center, &self.node_features[j]))
                .collect(),
            Constructor::Ed | Constructor::Knn => {
                let w = if ids.is_empty() { 0.0 } else { 1.0 / ids.len() as f64 };
                vec![w; ids.len()]
            }
            Constructor::Gat => {
                if ids.is_empty() {
                    return Vec::new();
                }
                let params = self.params.gat.as_ref().expect("gat graph carries attention params");
                let feats: Vec<&[f64]> = ids.iter().map(|&j| self.node_features[j].values()).collect();
                params.softmax_weights(center.values(), &feats)
            }
        }
    }

    /// Neighbor selection for a fingerprint that is not a node of the graph.
    /// For `gate` this is the attention ranking over every stored node,
    /// otherwise each baseline's own rule.
    pub fn query_neighbors(&self, query: &NormalizedFingerprint) -> Vec<usize> {
        match self.tag {
            Constructor::Gate => {
                let mut scored: Vec<(usize, f64)> = self
                    .node_features
                    .iter()
                    .enumerate()
                    .map(|(j, f)| (j, attention_score(query, f)))
                    .collect();
                scored.sort_by(by_score_desc);
                scored.truncate(self.params.k_nb);
                scored.into_iter().map(|(j, _)| j).collect()
            }
            Constructor::Ed => {
                let phi = self.params.phi_ed.unwrap_or(f64::INFINITY);
                self.node_features
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| ed_distance_with(query, f, self.params.sqrt_ed) <= phi)
                    .map(|(j, _)| j)
                    .collect()
            }
            Constructor::Knn | Constructor::Gat => {
                let mut scored: Vec<(usize, f64)> = self
                    .node_features
                    .iter()
                    .enumerate()
                    .map(|(j, f)| (j, ed_distance_with(query, f, self.params.sqrt_ed)))
                    .collect();
                scored.sort_by(by_dist_asc);
                scored.truncate(self.params.k_nb);
                scored.into_iter().map(|(j, _)| j).collect()
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
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

/// On-disk graph: `{nodes, edges: [[i, j, w], ...], tag, ...}` plus the
/// node features and attachment parameters needed for online inference.
#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    tag: Constructor,
    node_features: Vec<Vec<f64>>,
    #[serde(flatten)]
    params: GraphParams,
}

impl From<&FingerprintGraph> for GraphFile {
    fn from(g: &FingerprintGraph) -> Self {
        GraphFile {
            nodes: g.n_nodes(),
            edges: g.edge_triples(),
            tag: g.tag,
            node_features: g.node_features.iter().map(|f| f.values().to_vec()).collect(),
            params: g.params.clone(),
        }
    }
}

impl TryFrom<GraphFile> for FingerprintGraph {
    type Error = Error;

    fn try_from(file: GraphFile) -> Result<Self> {
        if file.node_features.len() != file.nodes {
            return Err(Error::schema("graph node_features length differs from node count"));
        }
        let n_aps = file.node_features.first().map_or(0, Vec::len);
        if file.node_features.iter().any(|f| f.len() != n_aps) {
            return Err(Error::schema("graph node features have inconsistent lengths"));
        }
        let mut edges = vec![Vec::new(); file.nodes];
        for (i, j, weight) in file.edges {
            if i >= file.nodes || j >= file.nodes || i == j || !weight.is_finite() {
                return Err(Error::schema(format!("invalid edge ({i}, {j}, {weight})")));
            }
            edges[i].push(Edge { neighbor: j, weight });
        }
        for es in &mut edges {
            es.sort_by_key(|e| e.neighbor);
        }
        if file.tag == Constructor::Gat {
            file.params
                .gat
                .as_ref()
                .ok_or_else(|| Error::schema("gat graph without attention parameters"))?
                .validate()?;
        }
        Ok(FingerprintGraph {
            node_features: file.node_features.into_iter().map(NormalizedFingerprint::from_values).collect(),
            edges,
            tag: file.tag,
            params: file.params,
        })
    }
}

/// Per-RP node features: the element-wise mean of that RP's normalized
/// training fingerprints.
pub fn node_features(ds: &Dataset) -> Result<Vec<NormalizedFingerprint>> {
    let mut sums = vec![vec![0.0; ds.n_aps]; ds.n_rps];
    let mut counts = vec![0usize; ds.n_rps];
    for s in &ds.samples {
        let nf = normalize(&s.fingerprint);
        for (acc, v) in sums[s.rp_id].iter_mut().zip(nf.values()) {
            *acc += v;
        }
        counts[s.rp_id] += 1;
    }
    if let Some(rp) = counts.iter().position(|&c| c == 0) {
        return Err(Error::schema(format!("reference point {rp} has no training samples")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(sum, c)| NormalizedFingerprint::from_values(sum.into_iter().map(|v| v / c as f64).collect()))
        .collect())
}

pub fn build_gate_graph(ds: &Dataset, cfg: &ModelConfig) -> Result<FingerprintGraph> {
    cfg.validate()?;
    if ds.n_rps < 2 {
        return Err(Error::DegeneratePath(ds.n_rps));
    }
    let features = node_features(ds)?;
    Ok(gate_graph_from_features(features, cfg.k_nb(ds.n_rps)))
}

/// GATE topology over precomputed node features.
pub fn gate_graph_from_features(features: Vec<NormalizedFingerprint>, k_nb: usize) -> FingerprintGraph {
    let n = features.len();
    let scores = pairwise(&features, attention_score);
    let edges = (0..n)
        .map(|i| {
            let mut ranked: Vec<(usize, f64)> =
                (0..n).filter(|&j| j != i).map(|j| (j, scores[i][j])).collect();
            ranked.sort_by(by_score_desc);
            let mut picked: Vec<usize> = ranked.iter().take(k_nb).map(|&(j, _)| j).collect();
            if i > 0 {
                picked.push(i - 1);
            }
            if i + 1 < n {
                picked.push(i + 1);
            }
            picked.sort_unstable();
            picked.dedup();
            picked
                .into_iter()
                .map(|j| Edge { neighbor: j, weight: scores[i][j] })
                .collect()
        })
        .collect();
    FingerprintGraph {
        node_features: features,
        edges,
        tag: Constructor::Gate,
        params: GraphParams { k_nb, phi_ed: None, sqrt_ed: false, gat: None },
    }
}

pub fn build_ed_graph(ds: &Dataset, cfg: &EdConfig) -> Result<FingerprintGraph> {
    let features = node_features(ds)?;
    let dist = pairwise(&features, |a, b| ed_distance_with(a, b, cfg.sqrt_ed));
    let n = features.len();
    let edges = (0..n)
        .map(|i| {
            let ids: Vec<usize> = (0..n).filter(|&j| j != i && dist[i][j] <= cfg.phi_ed).collect();
            let w = 1.0 / ids.len().max(1) as f64;
            ids.into_iter().map(|j| Edge { neighbor: j, weight: w }).collect()
        })
        .collect();
    // Feature assembly still needs a fixed neighbor budget; use the mean degree.
    let graph = FingerprintGraph {
        node_features: features,
        edges,
        tag: Constructor::Ed,
        params: GraphParams { k_nb: 1, phi_ed: Some(cfg.phi_ed), sqrt_ed: cfg.sqrt_ed, gat: None },
    };
    let mean_degree = (graph.edge_count() as f64 / n.max(1) as f64).round() as usize;
    Ok(FingerprintGraph {
        params: GraphParams { k_nb: mean_degree.max(1), ..graph.params.clone() },
        ..graph
    })
}

pub fn build_knn_graph(ds: &Dataset, cfg: &KnnConfig) -> Result<FingerprintGraph> {
    if cfg.k == 0 || cfg.k >= ds.n_rps {
        return Err(Error::config(format!("knn k = {} must be in [1, n_rps) with n_rps = {}", cfg.k, ds.n_rps)));
    }
    let features = node_features(ds)?;
    let dist = pairwise(&features, |a, b| ed_distance_with(a, b, cfg.sqrt_ed));
    let n = features.len();
    let w = 1.0 / cfg.k as f64;
    let edges = (0..n)
        .map(|i| {
            let mut ranked: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, dist[i][j])).collect();
            ranked.sort_by(by_dist_asc);
            let mut ids: Vec<usize> = ranked.into_iter().take(cfg.k).map(|(j, _)| j).collect();
            ids.sort_unstable();
            ids.into_iter().map(|j| Edge { neighbor: j, weight: w }).collect()
        })
        .collect();
    Ok(FingerprintGraph {
        node_features: features,
        edges,
        tag: Constructor::Knn,
        params: GraphParams { k_nb: cfg.k, phi_ed: None, sqrt_ed: cfg.sqrt_ed, gat: None },
    })
}

/// Replaces every node's edge weights with a softmax over its neighbors of
/// `LeakyReLU(a · [W fi || W fj])`. The topology is unchanged.
pub fn gat_attention(graph: &FingerprintGraph, params: &GatParams) -> Result<FingerprintGraph> {
    params.validate()?;
    if params.n != graph.n_aps() {
        return Err(Error::shape(format!(
            "GAT params expect {} APs, graph has {}",
            params.n,
            graph.n_aps()
        )));
    }
    let edges = graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, es)| {
            let feats: Vec<&[f64]> = es.iter().map(|e| graph.node_features[e.neighbor].values()).collect();
            let weights = params.softmax_weights(graph.node_features[i].values(), &feats);
            es.iter()
                .zip(weights)
                .map(|(e, weight)| Edge { neighbor: e.neighbor, weight })
                .collect()
        })
        .collect();
    Ok(FingerprintGraph {
        node_features: graph.node_features.clone(),
        edges,
        tag: Constructor::Gat,
        params: GraphParams { gat: Some(params.clone()), ..graph.params.clone() },
    })
}

/// Threshold that admits roughly `k` neighbors per node: the `k/(n-1)`
/// quantile of all off-diagonal pairwise distances.
pub fn ed_threshold_for_degree(ds: &Dataset, k: usize, sqrt_ed: bool) -> Result<f64> {
    let features = node_features(ds)?;
    let n = features.len();
    let mut all: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                all.push(ed_distance_with(&features[i], &features[j], sqrt_ed));
            }
        }
    }
    if all.is_empty() {
        return Ok(0.0);
    }
    all.sort_by(f64::total_cmp);
    let frac = k as f64 / (n - 1) as f64;
    let idx = ((frac * all.len() as f64).ceil() as usize).clamp(1, all.len()) - 1;
    Ok(all[idx])
}

fn pairwise<F>(features: &[NormalizedFingerprint], f: F) -> Vec<Vec<f64>>
where
    F: Fn(&NormalizedFingerprint, &NormalizedFingerprint) -> f64,
{
    let n = features.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = f(&features[i], &features[j]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}
