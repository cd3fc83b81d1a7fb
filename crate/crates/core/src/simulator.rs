//! Synthetic RSS environment.
//!
//! A walking path is laid out as an axis-aligned polyline with reference
//! points every meter. Access points are scattered around it. Readings
//! follow log-distance path loss, perturbed by a per-AP Gaussian (each AP
//! has its own, frozen standard deviation) plus shared shadowing, then
//! distorted by the device's affine gain/offset and detection floor.
//!
//! Each `(seed, split, rp, device, sample)` cell draws from its own keyed
//! stream, so any subset of a dataset regenerates identically.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Fingerprint, LabeledSample, Split, MAX_RSS, MAX_TRAIN_SAMPLES_PER_CELL, MISSING_RSS};
use crate::rng::{hash_str, keyed_rng};

const GEOMETRY_KEY: u64 = 0x67656f;
const NOISE_KEY: u64 = 0x6e6f6973;
const TRUNCATE_KEY: u64 = 0x7472756e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    /// Received power at 1 m.
    pub p0_dbm: f64,
    pub exponent: f64,
}

impl PathLoss {
    pub fn rss_at(&self, distance_m: f64) -> f64 {
        self.p0_dbm - 10.0 * self.exponent * distance_m.max(1.0).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Frozen per-AP standard deviations (dB).
    pub per_ap_sigma: Vec<f64>,
    /// Extra per-sample noise shared by all APs (dB).
    pub shadowing_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub gain_a: f64,
    pub offset_b: f64,
    pub detect_floor: f64,
}

impl DeviceProfile {
    pub fn reference() -> Self {
        DeviceProfile { device_id: "d0".into(), gain_a: 1.0, offset_b: 0.0, detect_floor: -95.0 }
    }

    /// Seven stand-in handsets: `d0` is the undistorted reference.
    pub fn presets() -> Vec<DeviceProfile> {
        [
            (1.00, 0.0, -95.0),
            (0.92, 4.0, -90.0),
            (1.08, -5.0, -97.0),
            (0.95, -3.0, -92.0),
            (1.05, 6.0, -88.0),
            (0.90, -6.0, -96.0),
            (1.10, 2.0, -94.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(gain_a, offset_b, detect_floor))| DeviceProfile {
            device_id: format!("d{i}"),
            gain_a,
            offset_b,
            detect_floor,
        })
        .collect()
    }
}

/// Size and noise parameters a scenario is generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_rps: usize,
    pub n_aps: usize,
    /// APs are placed uniformly in the path's bounding box grown by this.
    pub ap_margin_m: f64,
    pub pathloss: PathLoss,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub shadowing_sigma: f64,
    /// One shared sigma for every AP instead of per-AP values.
    pub euclidean: bool,
    pub n_devices: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "custom".into(),
            n_rps: 60,
            n_aps: 100,
            ap_margin_m: 40.0,
            pathloss: PathLoss { p0_dbm: -30.0, exponent: 3.0 },
            sigma_min: 0.5,
            sigma_max: 6.0,
            shadowing_sigma: 1.0,
            euclidean: false,
            n_devices: 7,
        }
    }
}

impl ScenarioSpec {
    /// Building-shaped presets `b1`..`b5` plus small desk-scale ones.
    pub fn preset(name: &str) -> Result<Self> {
        let sized = |n_rps, n_aps| ScenarioSpec { name: name.to_string(), n_rps, n_aps, ..Default::default() };
        Ok(match name {
            "b1" => sized(59, 339),
            "b2" => sized(60, 203),
            "b3" => sized(60, 183),
            "b4" => sized(48, 125),
            "b5" => sized(88, 78),
            // Noise-free single-device sanity scenario.
            "toy" => ScenarioSpec { ap_margin_m: 20.0, ..sized(20, 30) }.noise_free(),
            // Dense-AP building analog at desk scale (AP/RP ratio of b1).
            "desk-dense" => sized(24, 136),
            // Sparse-AP building analog (AP/RP ratio of b5).
            "desk-sparse" => sized(30, 27),
            other => return Err(Error::config(format!("unknown preset {other:?}"))),
        })
    }

    pub const PRESETS: [&'static str; 8] = ["b1", "b2", "b3", "b4", "b5", "toy", "desk-dense", "desk-sparse"];

    pub fn noise_free(self) -> Self {
        ScenarioSpec { sigma_min: 0.0, sigma_max: 0.0, shadowing_sigma: 0.0, n_devices: 1, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rps < 2 {
            return Err(Error::config("scenario needs at least 2 reference points"));
        }
        if self.n_aps == 0 {
            return Err(Error::config("scenario needs at least one access point"));
        }
        if !(self.pathloss.exponent > 0.0) || !self.pathloss.p0_dbm.is_finite() {
            return Err(Error::config("path-loss exponent must be positive"));
        }
        if !(0.0 <= self.sigma_min && self.sigma_min <= self.sigma_max) || self.shadowing_sigma < 0.0 {
            return Err(Error::config("noise sigmas must be nonnegative with min <= max"));
        }
        if self.n_devices == 0 || self.n_devices > DeviceProfile::presets().len() {
            return Err(Error::config("n_devices must be in 1..=7"));
        }
        if !(self.ap_margin_m >= 0.0) {
            return Err(Error::config("ap_margin_m must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n_rps: usize,
    pub n_aps: usize,
    pub ap_positions: Vec<[f64; 2]>,
    pub rp_positions: Vec<[f64; 2]>,
    pub pathloss: PathLoss,
    pub noise: NoiseModel,
    pub devices: Vec<DeviceProfile>,
    pub seed: u64,
}

/// Axis-aligned polyline with random 90° turns, sampled every meter.
fn walk_path(n_rps: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = keyed_rng(&[seed, GEOMETRY_KEY, 0]);
    let dirs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
    let mut dir = 0usize;
    let mut pos = [0.0f64, 0.0];
    let mut left_in_segment: usize = rng.random_range(8..=20);
    let mut out = Vec::with_capacity(n_rps);
    for _ in 0..n_rps {
        out.push(pos);
        if left_in_segment == 0 {
            // Turn left or right, never back on ourselves.
            dir = if rng.random_bool(0.5) { (dir + 1) % 4 } else { (dir + 3) % 4 };
            left_in_segment = rng.random_range(8..=20);
        }
        left_in_segment -= 1;
        pos = [pos[0] + dirs[dir][0], pos[1] + dirs[dir][1]];
    }
    out
}

pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let rp_positions = walk_path(spec.n_rps, seed);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &rp_positions {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut rng = keyed_rng(&[seed, GEOMETRY_KEY, 1]);
    let ap_positions = (0..spec.n_aps)
        .map(|_| {
            [
                rng.random_range(lo[0] - spec.ap_margin_m..=hi[0] + spec.ap_margin_m),
                rng.random_range(lo[1] - spec.ap_margin_m..=hi[1] + spec.ap_margin_m),
            ]
        })
        .collect();
    let mut rng = keyed_rng(&[seed, NOISE_KEY]);
    let mut draw_sigma = || {
        if spec.sigma_max > spec.sigma_min {
            rng.random_range(spec.sigma_min..=spec.sigma_max)
        } else {
            spec.sigma_min
        }
    };
    let per_ap_sigma = if spec.euclidean {
        vec![draw_sigma(); spec.n_aps]
    } else {
        (0..spec.n_aps).map(|_| draw_sigma()).collect()
    };
    Ok(Scenario {
        name: spec.name.clone(),
        n_rps: spec.n_rps,
        n_aps: spec.n_aps,
        ap_positions,
        rp_positions,
        pathloss: spec.pathloss.clone(),
        noise: NoiseModel { per_ap_sigma, shadowing_sigma: spec.shadowing_sigma },
        devices: DeviceProfile::presets().into_iter().take(spec.n_devices).collect(),
        seed,
    })
}

impl Scenario {
    pub fn device(&self, device_id: &str) -> Result<&DeviceProfile> {
        self.devices
            .iter()
            .find(|d| d.device_id == device_id)
            .ok_or_else(|| Error::config(format!("unknown device {device_id:?}")))
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.device_id.clone()).collect()
    }

    /// Noise-free, undistorted reading of AP `ap` at RP `rp`.
    pub fn clean_rss(&self, rp: usize, ap: usize) -> f64 {
        let (a, b) = (self.rp_positions[rp], self.ap_positions[ap]);
        self.pathloss.rss_at(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rps < 2 || self.rp_positions.len() != self.n_rps {
            return Err(Error::config("scenario RP positions inconsistent"));
        }
        if self.ap_positions.len() != self.n_aps || self.noise.per_ap_sigma.len() != self.n_aps {
            return Err(Error::config("scenario AP arrays inconsistent"));
        }
        if !(self.pathloss.exponent > 0.0) {
            return Err(Error::config("path-loss exponent must be positive"));
        }
        let finite = |p: &[f64; 2]| p[0].is_finite() && p[1].is_finite();
        if !self.rp_positions.iter().chain(&self.ap_positions).all(finite) {
            return Err(Error::config("non-finite position"));
        }
        if self.devices.iter().any(|d| !(d.gain_a > 0.0)) {
            return Err(Error::config("device gain must be positive"));
        }
        Ok(())
    }
}

/// One fingerprint drawn from `rng`.
pub fn sample_fingerprint<R: Rng + ?Sized>(
    sc: &Scenario,
    rp_id: usize,
    device: &DeviceProfile,
    rng: &mut R,
) -> Fingerprint {
    let rss = (0..sc.n_aps)
        .map(|k| {
            let mut v = sc.clean_rss(rp_id, k);
            v += gaussian(rng, sc.noise.per_ap_sigma[k]);
            v += gaussian(rng, sc.noise.shadowing_sigma);
            v = device.gain_a * v + device.offset_b;
            if v < device.detect_floor {
                MISSING_RSS
            } else {
                v.clamp(MISSING_RSS, MAX_RSS)
            }
        })
        .collect();
    Fingerprint::from_valid(rss)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    // Always consume a draw so stream positions do not depend on sigma.
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    z * sigma
}

/// Full factorial `rp x device x sample`, rows in that order.
pub fn generate_dataset(sc: &Scenario, samples_per_rp: usize, devices: &[String], split: Split) -> Result<Dataset> {
    if samples_per_rp == 0 || (split == Split::Train && samples_per_rp > MAX_TRAIN_SAMPLES_PER_CELL) {
        return Err(Error::config(format!("samples_per_rp {samples_per_rp} out of range")));
    }
    let profiles = devices.iter().map(|d| sc.device(d)).collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(sc.n_rps * devices.len() * samples_per_rp);
    for rp in 0..sc.n_rps {
        for dev in &profiles {
            for idx in 0..samples_per_rp {
                let mut rng = keyed_rng(&[sc.seed, split.key(), rp as u64, hash_str(&dev.device_id), idx as u64]);
                samples.push(LabeledSample {
                    rp_id: rp,
                    device_id: dev.device_id.clone(),
                    sample_idx: idx,
                    fingerprint: sample_fingerprint(sc, rp, dev, &mut rng),
                });
            }
        }
    }
    Dataset::new(sc.n_aps, sc.n_rps, samples, split)
}

/// AP indices forced to the missing sentinel at each RP.
pub fn truncation_sets(n_rps: usize, n_aps: usize, percent: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(0.0..=90.0).contains(&percent) {
        return Err(Error::config(format!("truncation percent {percent} not in [0, 90]")));
    }
    let drop = (percent / 100.0 * n_aps as f64).floor() as usize;
    Ok((0..n_rps)
        .map(|rp| {
            let mut rng = keyed_rng(&[seed, TRUNCATE_KEY, rp as u64]);
            let mut idx = sample_indices(&mut rng, n_aps, drop).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Replaces the same random `⌊percent·N⌋` APs by the sentinel in every
/// sample of each RP.
pub fn truncate_fingerprints(ds: &Dataset, percent: f64, seed: u64) -> Result<Dataset> {
    let sets = truncation_sets(ds.n_rps, ds.n_aps, percent, seed)?;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut rss = s.fingerprint.rss().to_vec();
            for &k in &sets[s.rp_id] {
                rss[k] = MISSING_RSS;
            }
            LabeledSample { fingerprint: Fingerprint::from_valid(rss), ..s.clone() }
        })
        .collect();
    Dataset::new(ds.n_aps, ds.n_rps, samples, ds.split)
}
