//! Online inference by real-time edge construction: a query fingerprint is
//! attached to the stored graph as a temporary node, linked to its `k_nb`
//! highest-attention nodes, expanded into a feature matrix exactly as in
//! training and classified. Neither the graph nor the model is modified.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::edges::{attention_score, by_score_desc, FingerprintGraph};
use crate::error::{Error, Result};
use crate::gcn::{argmax, GcnModel};
use crate::mdhv::{build_mdhv, neighborhood, Mdhv, Neighborhood};
use crate::model::{normalize, Ablation, Fingerprint};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryFingerprint {
    pub fingerprint: Fingerprint,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub rp_id: usize,
    pub probabilities: Vec<f64>,
    pub neighbor_ids: Vec<usize>,
    /// Query had no detected AP at all.
    pub low_confidence: bool,
    pub latency: Latency,
}

impl Prediction {
    /// The `n` most probable RPs, ties to the lower index.
    pub fn top(&self, n: usize) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.probabilities.iter().copied().enumerate().collect();
        ranked.sort_by(by_score_desc);
        ranked.truncate(n);
        ranked
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency.total_ms
    }
}

/// Wall-clock split of one inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    /// Edge construction and feature assembly.
    pub rtec_ms: f64,
    /// Network forward pass.
    pub gcn_ms: f64,
    pub total_ms: f64,
}

/// Scores the query against every stored node and returns the top `k_nb`
/// `(node, score)` pairs, ties to the lower index.
pub fn attach_and_score(query: &QueryFingerprint, graph: &FingerprintGraph) -> Result<Vec<(usize, f64)>> {
    check_len(query, graph.n_aps())?;
    let q = normalize(&query.fingerprint);
    let mut scored: Vec<(usize, f64)> = graph
        .node_features
        .iter()
        .enumerate()
        .map(|(i, f)| (i, attention_score(&q, f)))
        .collect();
    scored.sort_by(by_score_desc);
    scored.truncate(graph.k_nb());
    Ok(scored)
}

fn check_len(query: &QueryFingerprint, n_aps: usize) -> Result<()> {
    if query.fingerprint.len() != n_aps {
        return Err(Error::shape(format!(
            "query has {} APs, expected {n_aps}",
            query.fingerprint.len()
        )));
    }
    Ok(())
}

/// The feature matrix online inference feeds to the network, with the
/// neighbors it was built from.
pub fn query_mdhv(query: &QueryFingerprint, graph: &FingerprintGraph, ablation: Ablation) -> Result<(Mdhv, Neighborhood)> {
    check_len(query, graph.n_aps())?;
    let q = normalize(&query.fingerprint);
    let hood = if ablation == Ablation::NoMdhv {
        Neighborhood { ids: Vec::new(), weights: Vec::new() }
    } else {
        neighborhood(graph, &q, &graph.query_neighbors(&q))
    };
    Ok((build_mdhv(graph, &q, &hood, ablation)?, hood))
}

pub fn infer(query: &QueryFingerprint, graph: &FingerprintGraph, model: &GcnModel) -> Result<Prediction> {
    if model.n_aps != graph.n_aps() || model.n_rps != graph.n_nodes() {
        return Err(Error::shape(format!(
            "model is {} RPs x {} APs, graph is {} x {}",
            model.n_rps,
            model.n_aps,
            graph.n_nodes(),
            graph.n_aps()
        )));
    }
    check_len(query, model.n_aps)?;
    let start = Instant::now();
    let (mdhv, hood) = query_mdhv(query, graph, model.config.ablation)?;
    let rtec_done = Instant::now();
    let probabilities = model.forward(&mdhv)?;
    let end = Instant::now();
    let low_confidence = query.fingerprint.rss().iter().all(|&v| v == crate::model::MISSING_RSS);
    Ok(Prediction {
        rp_id: argmax(&probabilities),
        probabilities,
        neighbor_ids: hood.ids,
        low_confidence,
        latency: Latency {
            rtec_ms: (rtec_done - start).as_secs_f64() * 1e3,
            gcn_ms: (end - rtec_done).as_secs_f64() * 1e3,
            total_ms: (end - start).as_secs_f64() * 1e3,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::gate_graph_from_features;
    use crate::model::{ModelConfig, NormalizedFingerprint};

    fn graph() -> FingerprintGraph {
        let feats = [
            [60.0, 10.0, 0.0],
            [10.0, 60.0, 5.0],
            [0.0, 20.0, 70.0],
            [40.0, 40.0, 40.0],
        ]
        .iter()
        .map(|v| NormalizedFingerprint::from_values(v.to_vec()))
        .collect();
        gate_graph_from_features(feats, 2)
    }

    fn query(normalized: &[f64]) -> QueryFingerprint {
        QueryFingerprint {
            fingerprint: Fingerprint::new(normalized.iter().map(|v| v - 100.0).collect()).unwrap(),
            device_id: "q".into(),
        }
    }

    #[test]
    fn exact_match_ranks_first() {
        let g = graph();
        let top = attach_and_score(&query(&[0.0, 20.0, 70.0]), &g).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].0, 2);
        assert!((top[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_matches_exhaustive_sort() {
        let g = graph();
        let q = [30.0, 50.0, 10.0];
        let nq = NormalizedFingerprint::from_values(q.to_vec());
        let mut oracle: Vec<(usize, f64)> = (0..4)
            .map(|i| {
                let f = g.node_features[i].values();
                let d: f64 = f.iter().zip(&q).map(|(a, b)| a * b).sum();
                (i, d / (nq.norm() * g.node_features[i].norm()))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let got = attach_and_score(&query(&q), &g).unwrap();
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), vec![oracle[0].0, oracle[1].0]);
    }

    #[test]
    fn all_zero_query_is_low_confidence() {
        let g = graph();
        let cfg = ModelConfig { nb_percent: 50.0, ..Default::default() };
        let model = GcnModel::init(&cfg, 3, 4, Ablation::Full.columns(2));
        let p = infer(&query(&[0.0, 0.0, 0.0]), &g, &model).unwrap();
        assert!(p.low_confidence);
        assert_eq!(p.neighbor_ids.len(), 2);
        assert!(attach_and_score(&query(&[0.0, 0.0, 0.0]), &g).unwrap().iter().all(|s| s.1 == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let g = graph();
        let model = GcnModel::init(&ModelConfig::default(), 3, 4, Ablation::Full.columns(2));
        assert!(infer(&query(&[1.0, 2.0]), &g, &model).is_err());
        let other = GcnModel::init(&ModelConfig::default(), 5, 4, 4);
        assert!(infer(&query(&[1.0, 2.0, 3.0]), &g, &other).is_err());
    }

    #[test]
    fn top_three() {
        let p = Prediction {
            rp_id: 1,
            probabilities: vec![0.1, 0.5, 0.1, 0.3],
            neighbor_ids: vec![],
            low_confidence: false,
            latency: Latency::default(),
        };
        assert_eq!(p.top(3), vec![(1, 0.5), (3, 0.3), (0, 0.1)]);
    }
}
