//! Multi-dimensional feature assembly.
//!
//! For a center fingerprint `F` and an ordered neighborhood `(F_j, w_j)`:
//!
//! * `MSG = Σ w_j F_j` (raw weights, no renormalization),
//! * `AHV_j = (F ⊙ F_j) / (‖F‖ ‖F_j‖)`, one column per neighbor,
//! * `MDHV = [F | MSG | AHV_1 .. AHV_k]` as an `N x C` matrix.
//!
//! Neighborhoods are ordered by descending weight (ties to the lower node
//! index) in both training and online inference, so AHV column `c` always
//! means "the c-th most relevant neighbor".

use serde::{Deserialize, Serialize};

use crate::edges::{by_score_desc, Constructor, FingerprintGraph, FEATURE_SCALE};
use crate::error::{Error, Result};
use crate::model::{Ablation, NormalizedFingerprint};

#[derive(Debug, Clone, PartialEq)]
pub struct MsgVector(pub Vec<f64>);

impl MsgVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `N x k` tensor stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct AhvTensor {
    pub n: usize,
    pub columns: Vec<Vec<f64>>,
}

impl AhvTensor {
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }
}

/// Row-major `rows x cols` feature matrix; rows are access points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdhv {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Leading columns in RSS units (`F`, and `MSG` when present).
    pub rss_columns: usize,
}

impl Mdhv {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Network input: RSS-unit columns scaled by [`FEATURE_SCALE`], the
    /// dimensionless AHV columns passed through.
    pub fn gcn_input(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(self.cols) {
            for v in &mut row[..self.rss_columns] {
                *v *= FEATURE_SCALE;
            }
        }
        out
    }
}

pub fn compute_msg(
    f_center: &NormalizedFingerprint,
    neighbors: &[(&NormalizedFingerprint, f64)],
) -> Result<MsgVector> {
    let n = f_center.len();
    let mut msg = vec![0.0; n];
    for (fj, w) in neighbors {
        if fj.len() != n {
            return Err(Error::shape(format!("neighbor length {} != {n}", fj.len())));
        }
        for (m, v) in msg.iter_mut().zip(fj.values()) {
            *m += w * v;
        }
    }
    Ok(MsgVector(msg))
}

pub fn compute_ahv(f_center: &NormalizedFingerprint, neighbors: &[&NormalizedFingerprint]) -> Result<AhvTensor> {
    let n = f_center.len();
    let center_norm = f_center.norm();
    let columns = neighbors
        .iter()
        .map(|fj| {
            if fj.len() != n {
                return Err(Error::shape(format!("neighbor length {} != {n}", fj.len())));
            }
            let denom = center_norm * fj.norm();
            Ok(if denom == 0.0 {
                vec![0.0; n]
            } else {
                f_center.values().iter().zip(fj.values()).map(|(a, b)| a * b / denom).collect()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AhvTensor { n, columns })
}

/// Concatenates `[F | MSG | AHV...]`, dropping the parts the ablation removes.
pub fn assemble_mdhv(f: &NormalizedFingerprint, msg: &MsgVector, ahv: &AhvTensor, ablation: Ablation) -> Result<Mdhv> {
    let n = f.len();
    if msg.0.len() != n || ahv.n != n || ahv.columns.iter().any(|c| c.len() != n) {
        return Err(Error::shape("fingerprint, MSG and AHV lengths differ"));
    }
    let mut cols: Vec<&[f64]> = vec![f.values()];
    if ablation.uses_msg() {
        cols.push(msg.values());
    }
    let rss_columns = cols.len();
    if ablation.uses_ahv() {
        cols.extend(ahv.columns.iter().map(Vec::as_slice));
    }
    let c = cols.len();
    let mut data = vec![0.0; n * c];
    for (j, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            data[r * c + j] = *v;
        }
    }
    Ok(Mdhv { rows: n, cols: c, data, rss_columns })
}

/// Neighbor ids with their weights relative to some center fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Weighs `candidates` against `center` with the graph's rule, orders them
/// by descending weight and, for GATE graphs, keeps the top `k_nb`.
pub fn neighborhood(graph: &FingerprintGraph, center: &NormalizedFingerprint, candidates: &[usize]) -> Neighborhood {
    let weights = graph.neighbor_weights(center, candidates);
    let mut pairs: Vec<(usize, f64)> = candidates.iter().copied().zip(weights).collect();
    pairs.sort_by(by_score_desc);
    if graph.tag == Constructor::Gate {
        pairs.truncate(graph.k_nb());
    }
    let (ids, weights) = pairs.into_iter().unzip();
    Neighborhood { ids, weights }
}

/// Feature matrix for `center` over an ordered neighborhood. AHV columns are
/// truncated or zero-padded to exactly `graph.k_nb()`.
pub fn build_mdhv(
    graph: &FingerprintGraph,
    center: &NormalizedFingerprint,
    hood: &Neighborhood,
    ablation: Ablation,
) -> Result<Mdhv> {
    let n = center.len();
    if n != graph.n_aps() {
        return Err(Error::shape(format!("fingerprint has {n} APs, graph has {}", graph.n_aps())));
    }
    let feats: Vec<&NormalizedFingerprint> = hood.ids.iter().map(|&j| &graph.node_features[j]).collect();
    let msg = if ablation.uses_msg() {
        let weighted: Vec<(&NormalizedFingerprint, f64)> =
            feats.iter().copied().zip(hood.weights.iter().copied()).collect();
        compute_msg(center, &weighted)?
    } else {
        MsgVector(vec![0.0; n])
    };
    let ahv = if ablation.uses_ahv() {
        let k = graph.k_nb();
        let mut ahv = compute_ahv(center, &feats[..feats.len().min(k)])?;
        ahv.columns.resize(k, vec![0.0; n]);
        ahv
    } else {
        AhvTensor { n, columns: Vec::new() }
    };
    assemble_mdhv(center, &msg, &ahv, ablation)
}

/// Training-time feature matrix for a sample observed at node `rp`.
pub fn sample_mdhv(
    graph: &FingerprintGraph,
    sample: &NormalizedFingerprint,
    rp: usize,
    ablation: Ablation,
) -> Result<Mdhv> {
    let hood = if ablation == Ablation::NoMdhv {
        Neighborhood { ids: Vec::new(), weights: Vec::new() }
    } else {
        neighborhood(graph, sample, &graph.neighbor_ids(rp))
    };
    build_mdhv(graph, sample, &hood, ablation)
}
