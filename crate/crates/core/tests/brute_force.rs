//! Graph constructors and feature assembly against independent O(n²)
//! scalar-loop references on small random inputs.

use std::collections::BTreeSet;

use gate_core::edges::{gate_graph_from_features, node_features};
use gate_core::mdhv::{neighborhood, sample_mdhv};
use gate_core::rng::seeded_rng;
use gate_core::{
    build_ed_graph, build_gate_graph, build_knn_graph, Ablation, Dataset, EdConfig, Fingerprint, KnnConfig,
    LabeledSample, ModelConfig, NormalizedFingerprint, Split,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut ChaCha8Rng, n_rps: usize, n_aps: usize) -> Dataset {
    let mut samples = Vec::new();
    for rp in 0..n_rps {
        for idx in 0..rng.random_range(1..=3) {
            let rss = (0..n_aps)
                .map(|_| if rng.random_bool(0.2) { -100.0 } else { (rng.random_range(-95.0..-30.0f64)).round() })
                .collect();
            samples.push(LabeledSample {
                rp_id: rp,
                device_id: "d0".into(),
                sample_idx: idx,
                fingerprint: Fingerprint::new(rss).unwrap(),
            });
        }
    }
    Dataset::new(n_aps, n_rps, samples, Split::Train).unwrap()
}

fn ref_features(ds: &Dataset) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; ds.n_aps]; ds.n_rps];
    let mut counts = vec![0.0; ds.n_rps];
    for s in &ds.samples {
        for k in 0..ds.n_aps {
            out[s.rp_id][k] += s.fingerprint.rss()[k] + 100.0;
        }
        counts[s.rp_id] += 1.0;
    }
    for (row, c) in out.iter_mut().zip(counts) {
        for v in row.iter_mut() {
            *v /= c;
        }
    }
    out
}

fn ref_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        d += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na.sqrt() * nb.sqrt())
    }
}

fn ref_ed(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s / a.len() as f64
}

/// Indices of the `k` best entries of `score` (excluding `skip`), choosing
/// by repeated linear scans. `better(a, b)` is a strict preference.
fn ref_top_k(n: usize, k: usize, skip: Option<usize>, score: impl Fn(usize) -> f64, better: impl Fn(f64, f64) -> bool) -> BTreeSet<usize> {
    let mut chosen = BTreeSet::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if Some(j) == skip || chosen.contains(&j) {
                continue;
            }
            match best {
                None => best = Some(j),
                Some(b) if better(score(j), score(b)) => best = Some(j),
                _ => {}
            }
        }
        if let Some(b) = best {
            chosen.insert(b);
        }
    }
    chosen
}

fn edge_set(ids: Vec<usize>) -> BTreeSet<usize> {
    ids.into_iter().collect()
}

pub fn gate_graph_matches_reference() {
    let mut rng = seeded_rng(1);
    for _ in 0..60 {
        let n = rng.random_range(2..=10);
        let n_aps = rng.random_range(1..=6);
        let ds = random_dataset(&mut rng, n, n_aps);
        let cfg = ModelConfig { nb_percent: rng.random_range(1.0..=100.0), ..Default::default() };
        let g = build_gate_graph(&ds, &cfg).unwrap();
        let f = ref_features(&ds);
        let k = cfg.k_nb(n);
        for i in 0..n {
            let mut want = ref_top_k(n, k, Some(i), |j| ref_cos(&f[i], &f[j]), |a, b| a > b);
            if i > 0 {
                want.insert(i - 1);
            }
            if i + 1 < n {
                want.insert(i + 1);
            }
            assert_eq!(edge_set(g.neighbor_ids(i)), want, "node {i}");
            for e in &g.edges[i] {
                assert!((e.weight - ref_cos(&f[i], &f[e.neighbor])).abs() < 1e-12);
            }
        }
    }
}

pub fn ed_graph_matches_reference() {
    let mut rng = seeded_rng(2);
    for _ in 0..60 {
        let n = rng.random_range(2..=10);
        let n_aps = rng.random_range(1..=6);
        let ds = random_dataset(&mut rng, n, n_aps);
        let f = ref_features(&ds);
        let phi = rng.random_range(0.0..1500.0);
        let g = build_ed_graph(&ds, &EdConfig { phi_ed: phi, sqrt_ed: false }).unwrap();
        for i in 0..n {
            let want: BTreeSet<usize> = (0..n).filter(|&j| j != i && ref_ed(&f[i], &f[j]) <= phi).collect();
            assert_eq!(edge_set(g.neighbor_ids(i)), want);
        }
    }
}

pub fn ed_graph_four_nodes_two_edges() {
    // Normalized features on one AP: 0, 1, 3, 10 -> EDs 1, 4, 9, ... .
    let rows = [0.0, 1.0, 3.0, 10.0];
    let samples = rows
        .iter()
        .enumerate()
        .map(|(rp, v)| LabeledSample {
            rp_id: rp,
            device_id: "d0".into(),
            sample_idx: 0,
            fingerprint: Fingerprint::new(vec![v - 100.0]).unwrap(),
        })
        .collect();
    let ds = Dataset::new(1, 4, samples, Split::Train).unwrap();
    // Pairwise: (0,1)=1, (1,2)=4, (0,2)=9, (2,3)=49, ... ; phi between 4 and 9.
    let g = build_ed_graph(&ds, &EdConfig { phi_ed: 6.0, sqrt_ed: false }).unwrap();
    let mut undirected = BTreeSet::new();
    for (i, j, _) in g.edge_triples() {
        undirected.insert((i.min(j), i.max(j)));
    }
    assert_eq!(undirected, BTreeSet::from([(0, 1), (1, 2)]));
    assert_eq!(g.isolated_nodes(), 1);
}

pub fn knn_graph_matches_reference() {
    let mut rng = seeded_rng(3);
    for _ in 0..60 {
        let n = rng.random_range(2..=10);
        let n_aps = rng.random_range(1..=6);
        let ds = random_dataset(&mut rng, n, n_aps);
        let f = ref_features(&ds);
        let k = rng.random_range(1..n);
        let g = build_knn_graph(&ds, &KnnConfig { k, sqrt_ed: false }).unwrap();
        for i in 0..n {
            let want = ref_top_k(n, k, Some(i), |j| ref_ed(&f[i], &f[j]), |a, b| a < b);
            assert_eq!(edge_set(g.neighbor_ids(i)), want);
            assert!(g.edges[i].iter().all(|e| e.weight == 1.0 / k as f64));
        }
    }
}

pub fn constructors_are_deterministic() {
    let mut rng = seeded_rng(4);
    let ds = random_dataset(&mut rng, 9, 5);
    let cfg = ModelConfig { nb_percent: 30.0, ..Default::default() };
    assert_eq!(build_gate_graph(&ds, &cfg).unwrap(), build_gate_graph(&ds, &cfg).unwrap());
    let kc = KnnConfig { k: 3, sqrt_ed: true };
    assert_eq!(build_knn_graph(&ds, &kc).unwrap(), build_knn_graph(&ds, &kc).unwrap());
}

pub fn mdhv_matches_scalar_reference() {
    let mut rng = seeded_rng(5);
    for _ in 0..80 {
        let n = rng.random_range(2..=6);
        let n_aps = rng.random_range(1..=5);
        let ds = random_dataset(&mut rng, n, n_aps);
        let cfg = ModelConfig { nb_percent: rng.random_range(1.0..=100.0), ..Default::default() };
        let g = build_gate_graph(&ds, &cfg).unwrap();
        let f = ref_features(&ds);
        let k = g.k_nb();
        for s in &ds.samples {
            let x: Vec<f64> = s.fingerprint.rss().iter().map(|v| v + 100.0).collect();
            // Reference neighborhood: node edges ranked by cosine to the sample.
            let mut cand: Vec<(usize, f64)> =
                g.neighbor_ids(s.rp_id).into_iter().map(|j| (j, ref_cos(&x, &f[j]))).collect();
            cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            cand.truncate(k);
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let m = sample_mdhv(&g, &NormalizedFingerprint::from_values(x.clone()), s.rp_id, Ablation::Full).unwrap();
            assert_eq!((m.rows, m.cols), (n_aps, 2 + k));
            for r in 0..n_aps {
                assert_eq!(m.get(r, 0), x[r]);
                let mut msg = 0.0;
                for &(j, w) in &cand {
                    msg += w * f[j][r];
                }
                assert!((m.get(r, 1) - msg).abs() < 1e-12);
                for c in 0..k {
                    let want = match cand.get(c) {
                        Some(&(j, _)) => {
                            let nj: f64 = f[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                            if nx == 0.0 || nj == 0.0 {
                                0.0
                            } else {
                                x[r] * f[j][r] / (nx * nj)
                            }
                        }
                        None => 0.0,
                    };
                    assert!((m.get(r, 2 + c) - want).abs() < 1e-12);
                }
            }
        }
    }
}

pub fn ahv_columns_sum_to_edge_weights() {
    let mut rng = seeded_rng(6);
    let ds = random_dataset(&mut rng, 8, 6);
    let feats = node_features(&ds).unwrap();
    let g = gate_graph_from_features(feats.clone(), 3);
    for i in 0..g.n_nodes() {
        let hood = neighborhood(&g, &feats[i], &g.neighbor_ids(i));
        let m = sample_mdhv(&g, &feats[i], i, Ablation::Full).unwrap();
        for (c, w) in hood.weights.iter().enumerate() {
            let sum: f64 = m.column(2 + c).iter().sum();
            assert!((sum - w).abs() < 1e-9);
        }
    }
}

mod run {
    #[test]
    fn gate_graph_matches_reference() {
        super::gate_graph_matches_reference();
    }

    #[test]
    fn ed_graph_matches_reference() {
        super::ed_graph_matches_reference();
    }

    #[test]
    fn ed_graph_four_nodes_two_edges() {
        super::ed_graph_four_nodes_two_edges();
    }

    #[test]
    fn knn_graph_matches_reference() {
        super::knn_graph_matches_reference();
    }

    #[test]
    fn constructors_are_deterministic() {
        super::constructors_are_deterministic();
    }

    #[test]
    fn mdhv_matches_scalar_reference() {
        super::mdhv_matches_scalar_reference();
    }

    #[test]
    fn ahv_columns_sum_to_edge_weights() {
        super::ahv_columns_sum_to_edge_weights();
    }
}
