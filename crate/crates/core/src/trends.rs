//! Multi-seed trend experiments on the desk-scale noisy scenario.
//!
//! Each function runs one comparison for one seed (the seed drives both the
//! scenario and the model initialization) and returns the raw per-arm
//! errors. Averaging across seeds and applying tolerances is left to the
//! caller, so the same numbers feed the acceptance suite and `gate calibrate`.

use serde::{Deserialize, Serialize};

use crate::edges::Constructor;
use crate::error::Result;
use crate::harness::{run_ablation, run_baselines, run_truncation, sweep_nb_h, sweep_samples, ExperimentConfig};
use crate::model::{Ablation, ModelConfig};
use crate::simulator::{generate_scenario, Scenario, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub preset: String,
    pub epochs: usize,
    pub nb_percent: f64,
    pub h_percent: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig { preset: "desk-dense".into(), epochs: 1000, nb_percent: 10.0, h_percent: 50.0 }
    }
}

impl TrendConfig {
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        generate_scenario(&ScenarioSpec::preset(&self.preset)?, seed)
    }

    pub fn experiment(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                nb_percent: self.nb_percent,
                h_percent: self.h_percent,
                epochs: self.epochs,
                seed,
                ..Default::default()
            },
            truncation_seed: seed,
            ..Default::default()
        }
    }
}

/// Mean error at a sparse and at a saturated edge budget: `[nb, 100%]`.
pub fn edge_density_errors(cfg: &TrendConfig, seed: u64) -> Result<[f64; 2]> {
    let cells = sweep_nb_h(&cfg.scenario(seed)?, &cfg.experiment(seed), &[cfg.nb_percent, 100.0], &[cfg.h_percent])?;
    Ok([cells[0].mean_error_m, cells[1].mean_error_m])
}

/// Device variance with 1 and with 5 training samples per RP.
pub fn sample_count_variances(cfg: &TrendConfig, seed: u64) -> Result<[f64; 2]> {
    let rows = sweep_samples(&cfg.scenario(seed)?, &cfg.experiment(seed), &[1, 5])?;
    Ok([rows[0].1.device_variance_m, rows[1].1.device_variance_m])
}

/// Mean error of `[full, no_msg, no_ahv, no_mdhv]`.
pub fn ablation_errors(cfg: &TrendConfig, seed: u64) -> Result<[f64; 4]> {
    let r = run_ablation(&cfg.scenario(seed)?, &cfg.experiment(seed), &Ablation::ALL)?;
    Ok([r[0].overall_mean_m, r[1].overall_mean_m, r[2].overall_mean_m, r[3].overall_mean_m])
}

/// Mean error of `[gate, gat, ed, knn]`.
pub fn constructor_errors(cfg: &TrendConfig, seed: u64) -> Result<[f64; 4]> {
    let order = [Constructor::Gate, Constructor::Gat, Constructor::Ed, Constructor::Knn];
    let r = run_baselines(&cfg.scenario(seed)?, &cfg.experiment(seed), &order, false)?;
    Ok([r[0].overall_mean_m, r[1].overall_mean_m, r[2].overall_mean_m, r[3].overall_mean_m])
}

/// Truncation levels probed for the no-AHV curve.
pub const TRUNCATION_LEVELS: [f64; 4] = [0.0, 20.0, 40.0, 60.0];

/// No-AHV error at each of [`TRUNCATION_LEVELS`], then the full variant's
/// error at the last level.
pub fn truncation_errors(cfg: &TrendConfig, seed: u64) -> Result<([f64; 4], f64)> {
    let sc = cfg.scenario(seed)?;
    let exp = cfg.experiment(seed);
    let rows = run_truncation(&sc, &exp, &TRUNCATION_LEVELS, &[Ablation::NoAhv])?;
    let full = run_truncation(&sc, &exp, &TRUNCATION_LEVELS[3..], &[Ablation::Full])?;
    Ok(([rows[0].mean_error_m, rows[1].mean_error_m, rows[2].mean_error_m, rows[3].mean_error_m], full[0].mean_error_m))
}

/// Column-wise mean of per-seed results.
pub fn mean_over_seeds<const K: usize>(rows: &[[f64; K]]) -> [f64; K] {
    let mut out = [0.0; K];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len().max(1) as f64;
    out.map(|v| v / n)
}
