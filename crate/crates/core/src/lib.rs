//! Graph-attention indoor localization from Wi-Fi RSS fingerprints.
//!
//! Reference points (RPs) along a walking path become graph nodes, each
//! carrying a fingerprint of per-access-point signal strengths. Edges follow
//! both the path topology and cosine attention between fingerprints. Every
//! sample is expanded into a multi-dimensional feature matrix (fingerprint,
//! attention-weighted message, per-feature attention columns) and classified
//! by a small graph-convolution network. Queries are attached to the stored
//! graph at inference time by real-time edge construction.
//!
//! The crate also ships a synthetic RSS simulator and the experiment harness
//! used to reproduce sensitivity, ablation and baseline comparisons.

pub mod edges;
pub mod error;
pub mod gcn;
pub mod harness;
pub mod mdhv;
pub mod model;
pub mod rng;
pub mod rtec;
pub mod simulator;
pub mod trends;

pub use edges::{
    attention_score, build_ed_graph, build_gate_graph, build_knn_graph, ed_distance,
    gat_attention, Constructor, EdConfig, Edge, FingerprintGraph, GatParams, KnnConfig,
};
pub use error::{Error, Result};
pub use gcn::{train, train_on_graph, GcnModel, Gradients, TrainReport};
pub use harness::{evaluate, EvalReport, ExperimentConfig};
pub use mdhv::{assemble_mdhv, compute_ahv, compute_msg, AhvTensor, Mdhv, MsgVector};
pub use model::{
    normalize, Ablation, Dataset, Fingerprint, LabeledSample, ModelConfig, NormalizedFingerprint,
    Optimizer, Split, MISSING_RSS,
};
pub use rtec::{attach_and_score, infer, Prediction, QueryFingerprint};
pub use simulator::{DeviceProfile, NoiseModel, Scenario, ScenarioSpec};
