//! Domain types shared by every stage: fingerprints, labeled datasets,
//! RSS normalization, run configuration and dataset CSV persistence.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Encoding of an access point that was not detected at all.
pub const MISSING_RSS: f64 = -100.0;
/// Strongest representable reading.
pub const MAX_RSS: f64 = 0.0;

/// Raw RSS readings in dBm, one entry per access point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint(Vec<f64>);

impl Fingerprint {
    pub fn new(rss: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = rss
            .iter()
            .enumerate()
            .find(|(_, v)| !(MISSING_RSS..=MAX_RSS).contains(*v))
        {
            return Err(Error::schema(format!("rss out of range at AP {k}: {v}")));
        }
        Ok(Fingerprint(rss))
    }

    /// Builds a fingerprint without range checks; callers guarantee validity.
    pub(crate) fn from_valid(rss: Vec<f64>) -> Self {
        debug_assert!(rss.iter().all(|v| (MISSING_RSS..=MAX_RSS).contains(v)));
        Fingerprint(rss)
    }

    pub fn rss(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fingerprint shifted by +100 so that an undetected AP maps to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedFingerprint(Vec<f64>);

impl NormalizedFingerprint {
    /// Wraps already-normalized values (e.g. per-RP means).
    pub fn from_values(values: Vec<f64>) -> Self {
        NormalizedFingerprint(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

pub fn normalize(fp: &Fingerprint) -> NormalizedFingerprint {
    NormalizedFingerprint(fp.0.iter().map(|v| v - MISSING_RSS).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub rp_id: usize,
    pub device_id: String,
    pub sample_idx: usize,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn key(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e,
            Split::Test => 0x7465_7374,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_aps: usize,
    pub n_rps: usize,
    pub samples: Vec<LabeledSample>,
    pub split: Split,
}

/// Upper bound on training samples per (RP, device) cell.
pub const MAX_TRAIN_SAMPLES_PER_CELL: usize = 5;

impl Dataset {
    pub fn new(n_aps: usize, n_rps: usize, samples: Vec<LabeledSample>, split: Split) -> Result<Self> {
        let ds = Dataset { n_aps, n_rps, samples, split };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut per_cell: HashMap<(usize, &str), usize> = HashMap::new();
        for (row, s) in self.samples.iter().enumerate() {
            if s.fingerprint.len() != self.n_aps {
                return Err(Error::schema(format!(
                    "inconsistent AP count at row {}: expected {}, got {}",
                    row + 1,
                    self.n_aps,
                    s.fingerprint.len()
                )));
            }
            if s.rp_id >= self.n_rps {
                return Err(Error::schema(format!(
                    "rp_id {} out of range at row {} (n_rps = {})",
                    s.rp_id,
                    row + 1,
                    self.n_rps
                )));
            }
            if s.fingerprint.rss().iter().any(|v| !(MISSING_RSS..=MAX_RSS).contains(v)) {
                return Err(Error::schema(format!("rss out of range at row {}", row + 1)));
            }
            let count = per_cell.entry((s.rp_id, s.device_id.as_str())).or_default();
            *count += 1;
            if self.split == Split::Train && *count > MAX_TRAIN_SAMPLES_PER_CELL {
                return Err(Error::schema(format!(
                    "more than {MAX_TRAIN_SAMPLES_PER_CELL} training samples for rp {} device {}",
                    s.rp_id, s.device_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct device ids in first-seen order.
    pub fn device_ids(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for s in &self.samples {
            if !seen.iter().any(|d| d == &s.device_id) {
                seen.push(s.device_id.clone());
            }
        }
        seen
    }

    /// Keeps only the samples of the given devices.
    pub fn filter_devices(&self, devices: &[String]) -> Dataset {
        Dataset {
            n_aps: self.n_aps,
            n_rps: self.n_rps,
            samples: self
                .samples
                .iter()
                .filter(|s| devices.contains(&s.device_id))
                .cloned()
                .collect(),
            split: self.split,
        }
    }

    pub fn read_csv<R: Read>(reader: R, split: Split) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3
            || &headers[0] != "rp_id"
            || &headers[1] != "device_id"
            || &headers[2] != "sample_idx"
        {
            return Err(Error::schema("header must start with rp_id,device_id,sample_idx"));
        }
        for (k, h) in headers.iter().skip(3).enumerate() {
            if h != format!("ap_{k}") {
                return Err(Error::schema(format!("unexpected header column {h:?}, expected ap_{k}")));
            }
        }
        let n_aps = headers.len() - 3;
        let mut samples = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::schema(format!(
                    "inconsistent AP count at row {row}: expected {n_aps}, got {}",
                    record.len().saturating_sub(3)
                )));
            }
            let parse_usize = |field: &str, name: &str| -> Result<usize> {
                field
                    .trim()
                    .parse()
                    .map_err(|_| Error::schema(format!("malformed {name} {field:?} at row {row}")))
            };
            let rp_id = parse_usize(&record[0], "rp_id")?;
            let device_id = record[1].to_string();
            let sample_idx = parse_usize(&record[2], "sample_idx")?;
            let mut rss = Vec::with_capacity(n_aps);
            for field in record.iter().skip(3) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::schema(format!("malformed rss {field:?} at row {row}")))?;
                if !(MISSING_RSS..=MAX_RSS).contains(&v) {
                    return Err(Error::schema(format!("rss out of range at row {row}")));
                }
                rss.push(v);
            }
            samples.push(LabeledSample {
                rp_id,
                device_id,
                sample_idx,
                fingerprint: Fingerprint(rss),
            });
        }
        let n_rps = samples.iter().map(|s| s.rp_id + 1).max().unwrap_or(0);
        Dataset::new(n_aps, n_rps, samples, split)
    }

    pub fn load_csv(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(file), split)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["rp_id".to_string(), "device_id".into(), "sample_idx".into()];
        header.extend((0..self.n_aps).map(|k| format!("ap_{k}")));
        wtr.write_record(&header)?;
        let mut record = Vec::with_capacity(self.n_aps + 3);
        for s in &self.samples {
            record.clear();
            record.push(s.rp_id.to_string());
            record.push(s.device_id.clone());
            record.push(s.sample_idx.to_string());
            // `{}` on f64 prints the shortest string that parses back bit-exactly.
            record.extend(s.fingerprint.rss().iter().map(|v| format!("{v}")));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    /// SHA-256 of the canonical CSV serialization, used to prove that the
    /// arms of a comparison saw the same data.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_bytes()))
    }
}

/// Which parts of the multi-dimensional feature matrix are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoMsg,
    NoAhv,
    NoMdhv,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoMsg, Ablation::NoAhv, Ablation::NoMdhv];

    pub fn uses_msg(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoAhv)
    }

    pub fn uses_ahv(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoMsg)
    }

    /// Feature-matrix column count for `k` attention neighbors.
    pub fn columns(self, k: usize) -> usize {
        1 + usize::from(self.uses_msg()) + if self.uses_ahv() { k } else { 0 }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMsg => "no_msg",
            Ablation::NoAhv => "no_ahv",
            Ablation::NoMdhv => "no_mdhv",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_msg" | "no-msg" => Ok(Ablation::NoMsg),
            "no_ahv" | "no-ahv" => Ok(Ablation::NoAhv),
            "no_mdhv" | "no-mdhv" => Ok(Ablation::NoMdhv),
            other => Err(Error::config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(Error::config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Attention edges per node, as a percentage of the node count.
    pub nb_percent: f64,
    /// Channel compression between the two convolution layers, in percent.
    pub h_percent: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
}

fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nb_percent: 10.0,
            h_percent: 50.0,
            learning_rate: 1e-3,
            epochs: 1000,
            seed: 0,
            ablation: Ablation::Full,
            optimizer: Optimizer::Adam,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nb_percent > 0.0 && self.nb_percent <= 100.0) {
            return Err(Error::config(format!("nb_percent {} not in (0, 100]", self.nb_percent)));
        }
        if !(0.0..=90.0).contains(&self.h_percent) {
            return Err(Error::config(format!("h_percent {} not in [0, 90]", self.h_percent)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }

    /// Attention neighbors per node: `round(nb% * n_rps)`, at least one and
    /// strictly fewer than the node count.
    pub fn k_nb(&self, n_rps: usize) -> usize {
        let k = (self.nb_percent / 100.0 * n_rps as f64).round() as usize;
        k.max(1).min(n_rps.saturating_sub(1).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THREE_ROWS: &str = "rp_id,device_id,sample_idx,ap_0,ap_1,ap_2,ap_3\n\
        0,d0,0,-40,-100,-63.5,-100\n\
        1,d0,0,-41,-90,-60,-99\n\
        2,d0,0,-50,-80,-100,-70\n";

    #[test]
    fn parses_well_formed_file() {
        let ds = Dataset::read_csv(THREE_ROWS.as_bytes(), Split::Train).unwrap();
        assert_eq!(ds.n_aps, 4);
        assert_eq!(ds.n_rps, 3);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.samples[0].fingerprint.rss()[2], -63.5);
    }

    #[test]
    fn rejects_positive_rss_with_row_number() {
        let text = "rp_id,device_id,sample_idx,ap_0\n0,d0,0,-40\n1,d0,0,5\n";
        let err = Dataset::read_csv(text.as_bytes(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("rss out of range at row 2"), "{err}");
    }

    #[test]
    fn rejects_inconsistent_ap_count() {
        let text = "rp_id,device_id,sample_idx,ap_0,ap_1,ap_2,ap_3\n\
            0,d0,0,-40,-40,-40,-40\n\
            1,d0,0,-40,-40,-40,-40,-40\n";
        let err = Dataset::read_csv(text.as_bytes(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("inconsistent AP count"), "{err}");
    }

    #[test]
    fn rejects_malformed_fields() {
        let text = "rp_id,device_id,sample_idx,ap_0\nx,d0,0,-40\n";
        assert!(Dataset::read_csv(text.as_bytes(), Split::Train).is_err());
        let text = "rp,device_id,sample_idx,ap_0\n0,d0,0,-40\n";
        assert!(Dataset::read_csv(text.as_bytes(), Split::Train).is_err());
    }

    #[test]
    fn too_many_training_samples_per_cell() {
        let mut text = String::from("rp_id,device_id,sample_idx,ap_0\n");
        for i in 0..6 {
            text.push_str(&format!("0,d0,{i},-50\n"));
        }
        assert!(Dataset::read_csv(text.as_bytes(), Split::Train).is_err());
        assert!(Dataset::read_csv(text.as_bytes(), Split::Test).is_ok());
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(3, 0, vec![], Split::Test).unwrap();
        let bytes = ds.to_csv_bytes();
        assert_eq!(String::from_utf8(bytes.clone()).unwrap(), "rp_id,device_id,sample_idx,ap_0,ap_1,ap_2\n");
        let back = Dataset::read_csv(&bytes[..], Split::Test).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn save_and_load_file() {
        let ds = Dataset::read_csv(THREE_ROWS.as_bytes(), Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        ds.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path, Split::Train).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.samples[0].fingerprint.rss()[1].to_bits(), MISSING_RSS.to_bits());
    }

    #[test]
    fn normalize_examples() {
        let z = normalize(&Fingerprint::new(vec![-100.0; 3]).unwrap());
        assert_eq!(z.values(), &[0.0, 0.0, 0.0]);
        let a = normalize(&Fingerprint::new(vec![-40.0, -100.0]).unwrap());
        assert_eq!(a.values(), &[60.0, 0.0]);
        let b = normalize(&Fingerprint::new(vec![0.0, -50.0, -100.0]).unwrap());
        assert_eq!(b.values(), &[100.0, 50.0, 0.0]);
    }

    #[test]
    fn fingerprint_rejects_out_of_range() {
        assert!(Fingerprint::new(vec![-101.0]).is_err());
        assert!(Fingerprint::new(vec![0.5]).is_err());
        assert!(Fingerprint::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn k_nb_rounding_and_clamp() {
        let cfg = |nb| ModelConfig { nb_percent: nb, ..Default::default() };
        assert_eq!(cfg(34.0).k_nb(3), 1);
        assert_eq!(cfg(10.0).k_nb(20), 2);
        assert_eq!(cfg(1.0).k_nb(20), 1);
        assert_eq!(cfg(100.0).k_nb(20), 19);
        assert!(ModelConfig { h_percent: 95.0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { nb_percent: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ablation_column_counts() {
        assert_eq!(Ablation::Full.columns(2), 4);
        assert_eq!(Ablation::NoMsg.columns(3), 4);
        assert_eq!(Ablation::NoAhv.columns(7), 2);
        assert_eq!(Ablation::NoMdhv.columns(7), 1);
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
    }

    fn rss_value() -> impl Strategy<Value = f64> {
        prop_oneof![Just(MISSING_RSS), -100.0f64..=0.0]
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec((0usize..6, 0usize..3, prop::collection::vec(rss_value(), 4)), 0..12)
        ) {
            let samples: Vec<_> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (rp, dev, rss))| LabeledSample {
                    rp_id: rp,
                    device_id: format!("d{dev}"),
                    sample_idx: i,
                    fingerprint: Fingerprint::new(rss).unwrap(),
                })
                .collect();
            let n_rps = samples.iter().map(|s| s.rp_id + 1).max().unwrap_or(0);
            let ds = Dataset::new(4, n_rps, samples, Split::Test).unwrap();
            let back = Dataset::read_csv(&ds.to_csv_bytes()[..], Split::Test).unwrap();
            prop_assert_eq!(back.samples.len(), ds.samples.len());
            for (a, b) in back.samples.iter().zip(&ds.samples) {
                prop_assert_eq!(a.rp_id, b.rp_id);
                prop_assert_eq!(&a.device_id, &b.device_id);
                for (x, y) in a.fingerprint.rss().iter().zip(b.fingerprint.rss()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }

        #[test]
        fn normalize_preserves_order(a in -100.0f64..=0.0, b in -100.0f64..=0.0) {
            let n = normalize(&Fingerprint::new(vec![a, b]).unwrap());
            let v = n.values();
            prop_assert!(v[0] >= 0.0 && v[0] <= 100.0);
            if a < b { prop_assert!(v[0] < v[1]); }
            prop_assert_eq!(v[0] == 0.0, a == MISSING_RSS);
        }
    }
}
