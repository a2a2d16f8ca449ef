//! Dataset ingestion, validation, normalization, time-range splitting, and a
//! synthetic generator shaped like the target deployment: districts with
//! hourly weather features and a power label on the station side, demographic
//! features on the telecom side.
//!
//! Timestamps are ISO-8601 UTC strings used verbatim as sample ids; they sort
//! lexicographically in time order.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::Dataset;

pub const N_C_FEATURES: usize = 5;
pub const N_D_FEATURES: usize = 12;

pub const CSV_HEADER: &str = "district_id,timestamp,hour,temperature,wind_speed,humidity,\
barometer,headcount,gender_ratio,age_b1,age_b2,age_b3,age_b4,age_b5,wage_b1,wage_b2,wage_b3,\
corr_industrial,corr_commercial,label";

pub const C_FEATURE_NAMES: [&str; N_C_FEATURES] =
    ["hour", "temperature", "wind_speed", "humidity", "barometer"];

pub const D_FEATURE_NAMES: [&str; N_D_FEATURES] = [
    "headcount",
    "gender_ratio",
    "age_b1",
    "age_b2",
    "age_b3",
    "age_b4",
    "age_b5",
    "wage_b1",
    "wage_b2",
    "wage_b3",
    "corr_industrial",
    "corr_commercial",
];

/// One hourly record of a district.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictRow {
    pub timestamp: String,
    pub c_features: [f64; N_C_FEATURES],
    pub d_features: [f64; N_D_FEATURES],
    pub label: f64,
}

/// All records of one district, timestamps unique and ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictDataset {
    pub district_id: u32,
    pub rows: Vec<DistrictRow>,
}

impl DistrictDataset {
    pub fn timestamps(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.timestamp.clone()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.label).collect()
    }

    fn validate(&self) -> Result<()> {
        let mut prev: Option<&str> = None;
        for row in &self.rows {
            if let Some(p) = prev {
                if row.timestamp.as_str() <= p {
                    return Err(Error::Validation(format!(
                        "district {}: timestamps must be unique and ascending, {} follows {}",
                        self.district_id, row.timestamp, p
                    )));
                }
            }
            let finite = row.c_features.iter().chain(row.d_features.iter()).all(|v| v.is_finite())
                && row.label.is_finite();
            if !finite {
                return Err(Error::Validation(format!(
                    "district {}: non-finite value at {}",
                    self.district_id, row.timestamp
                )));
            }
            prev = Some(&row.timestamp);
        }
        Ok(())
    }
}

/// Train and test time ranges, inclusive on both ends, train strictly before
/// test, no overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: (String, String),
    pub test: (String, String),
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train.0 > self.train.1 || self.test.0 > self.test.1 {
            return Err(Error::Argument("split ranges must be ordered".into()));
        }
        if self.train.1 >= self.test.0 {
            return Err(Error::Argument(
                "train range must end strictly before the test range begins".into(),
            ));
        }
        Ok(())
    }

    pub fn in_train(&self, ts: &str) -> bool {
        self.train.0.as_str() <= ts && ts <= self.train.1.as_str()
    }

    pub fn in_test(&self, ts: &str) -> bool {
        self.test.0.as_str() <= ts && ts <= self.test.1.as_str()
    }
}

fn parse_field(raw: &str, column: &str, line: u64) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Validation(format!("line {line}: missing value in column {column}")));
    }
    let v: f64 = trimmed
        .parse()
        .map_err(|e| Error::Parse { line, msg: format!("column {column}: {e}") })?;
    if !v.is_finite() {
        return Err(Error::Validation(format!("line {line}: non-finite value in column {column}")));
    }
    Ok(v)
}

/// Loads one district's CSV. The header must match the documented schema
/// exactly; missing cells, duplicate timestamps and mixed districts are
/// rejected.
pub fn load_csv(path: &Path) -> Result<DistrictDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header: Vec<String> =
        reader.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.iter()
            .map(|s| s.to_string())
            .collect();
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if header != expected {
        return Err(Error::Validation(format!(
            "unexpected CSV header in {}: got [{}]",
            path.display(),
            header.join(",")
        )));
    }

    let mut district_id: Option<u32> = None;
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", expected.len(), record.len()),
            });
        }
        let id: u32 = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("column district_id: {e}") })?;
        match district_id {
            None => district_id = Some(id),
            Some(existing) if existing != id => {
                return Err(Error::Validation(format!(
                    "line {line}: file mixes districts {existing} and {id}"
                )));
            }
            _ => {}
        }
        let timestamp = record[1].trim().to_string();
        if timestamp.is_empty() {
            return Err(Error::Validation(format!("line {line}: missing value in column timestamp")));
        }
        if !seen.insert(timestamp.clone()) {
            return Err(Error::Validation(format!("line {line}: duplicate timestamp {timestamp}")));
        }
        let mut c_features = [0.0; N_C_FEATURES];
        for (k, name) in C_FEATURE_NAMES.iter().enumerate() {
            c_features[k] = parse_field(&record[2 + k], name, line)?;
        }
        let mut d_features = [0.0; N_D_FEATURES];
        for (k, name) in D_FEATURE_NAMES.iter().enumerate() {
            d_features[k] = parse_field(&record[2 + N_C_FEATURES + k], name, line)?;
        }
        let label = parse_field(&record[2 + N_C_FEATURES + N_D_FEATURES], "label", line)?;
        rows.push(DistrictRow { timestamp, c_features, d_features, label });
    }
    let ds = DistrictDataset {
        district_id: district_id
            .ok_or_else(|| Error::Validation(format!("{} holds no rows", path.display())))?,
        rows,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the canonical CSV form; floats use the shortest round-trip
/// representation, so `write_csv(load_csv(f))` is byte-identical for files
/// produced by this writer.
pub fn write_csv(ds: &DistrictDataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(ds.rows.len() * 128);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &ds.rows {
        out.push_str(&ds.district_id.to_string());
        out.push(',');
        out.push_str(&row.timestamp);
        for v in row.c_features.iter().chain(row.d_features.iter()).chain([row.label].iter()) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Label standardization parameters fitted on the pooled train range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: f64,
    pub std: f64,
}

impl LabelScaler {
    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Standardizes all labels in place using mean and population standard
/// deviation of the pooled train-range labels only (no test leakage).
pub fn normalize_labels(datasets: &mut [DistrictDataset], spec: &SplitSpec) -> Result<LabelScaler> {
    let train: Vec<f64> = datasets
        .iter()
        .flat_map(|d| d.rows.iter())
        .filter(|r| spec.in_train(&r.timestamp))
        .map(|r| r.label)
        .collect();
    if train.is_empty() {
        return Err(Error::Split("no labels fall inside the train range".into()));
    }
    let mean = train.iter().sum::<f64>() / train.len() as f64;
    let var = train.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / train.len() as f64;
    let std = var.sqrt();
    if std <= 1e-12 {
        return Err(Error::DegenerateLabels(format!("train labels are constant (std = {std})")));
    }
    let scaler = LabelScaler { mean, std };
    for ds in datasets.iter_mut() {
        for row in &mut ds.rows {
            row.label = scaler.normalize(row.label);
        }
    }
    Ok(scaler)
}

/// Partitions one district's rows into train and test by timestamp range;
/// rows outside both ranges are dropped.
pub fn split_by_time(ds: &DistrictDataset, spec: &SplitSpec) -> Result<(DistrictDataset, DistrictDataset)> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for row in &ds.rows {
        if spec.in_train(&row.timestamp) {
            train.push(row.clone());
        } else if spec.in_test(&row.timestamp) {
            test.push(row.clone());
        }
    }
    if train.is_empty() {
        return Err(Error::Split(format!("district {}: empty train range", ds.district_id)));
    }
    if test.is_empty() {
        return Err(Error::Split(format!("district {}: empty test range", ds.district_id)));
    }
    Ok((
        DistrictDataset { district_id: ds.district_id, rows: train },
        DistrictDataset { district_id: ds.district_id, rows: test },
    ))
}

/// A split spec covering the leading `train_fraction` of the pooled distinct
/// timestamps, with the remainder as the test range.
pub fn fraction_split_spec(datasets: &[DistrictDataset], train_fraction: f64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let stamps: BTreeSet<&str> =
        datasets.iter().flat_map(|d| d.rows.iter().map(|r| r.timestamp.as_str())).collect();
    let stamps: Vec<&str> = stamps.into_iter().collect();
    if stamps.len() < 2 {
        return Err(Error::Split("need at least two distinct timestamps to split".into()));
    }
    let cut = ((stamps.len() as f64 * train_fraction) as usize).clamp(1, stamps.len() - 1);
    Ok(SplitSpec {
        train: (stamps[0].to_string(), stamps[cut - 1].to_string()),
        test: (stamps[cut].to_string(), stamps[stamps.len() - 1].to_string()),
    })
}

/// Synthetic generator settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub districts: u32,
    pub rows_per_district: usize,
    pub seed: u64,
    /// Standard deviation of the irreducible label noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.3
}

fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Deterministic synthetic districts. The label mixes an hourly cycle and a
/// temperature effect (station-side features) with a district offset and a
/// mobility component that only the demographic features expose, so dropping
/// the demographic side measurably hurts prediction.
pub fn generate_synthetic_config(cfg: &SyntheticConfig) -> Result<Vec<DistrictDataset>> {
    if cfg.districts < 1 {
        return Err(Error::Argument("need at least one district".into()));
    }
    if cfg.rows_per_district < 1 {
        return Err(Error::Argument("need at least one row per district".into()));
    }
    let start = NaiveDate::from_ymd_opt(2019, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch");

    let mut out = Vec::with_capacity(cfg.districts as usize);
    for district in 1..=cfg.districts {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(u64::from(district))));
        let offset: f64 = rng.gen_range(-1.0..1.0);
        let base_head: f64 = rng.gen_range(600.0..1400.0);
        let gender_ratio: f64 = rng.gen_range(0.42..0.58);
        let mut age = [0.0; 5];
        let mut wage = [0.0; 3];
        fill_simplex(&mut rng, &mut age);
        fill_simplex(&mut rng, &mut wage);
        let corr_industrial = 0.5 + 0.35 * offset;
        let corr_commercial = 0.55 - 0.2 * offset;

        let mut mobility: f64 = 0.0;
        let mut rows = Vec::with_capacity(cfg.rows_per_district);
        for step in 0..cfg.rows_per_district {
            let t = start + Duration::hours(step as i64);
            let hour = f64::from(t.time().hour());
            let day = step as f64 / 24.0;
            let diurnal = (2.0 * std::f64::consts::PI * (hour - 8.0) / 24.0).sin();
            let seasonal = (2.0 * std::f64::consts::PI * day / 365.0).sin();

            let temperature = 18.0 + 8.0 * seasonal + 4.0 * diurnal + rng.gen_range(-1.5..1.5);
            let wind_speed = (6.0 + 3.0 * rng.gen_range(-1.0..1.0f64)).max(0.0);
            let humidity = (60.0 - 0.8 * (temperature - 18.0) + rng.gen_range(-8.0..8.0)).clamp(5.0, 100.0);
            let barometer = 1013.0 + 6.0 * rng.gen_range(-1.0..1.0) - 2.0 * seasonal;

            // AR(1) mobility signal, independent of weather and hour
            mobility = 0.85 * mobility + rng.gen_range(-0.5..0.5);
            let headcount = base_head * (1.0 + 0.25 * diurnal + 0.2 * mobility.tanh());

            let label = 2.0 * diurnal
                + 0.08 * (temperature - 18.0)
                + 1.6 * offset
                + 1.1 * mobility.tanh()
                + cfg.noise * rng.gen_range(-1.73..1.73);

            let mut d_features = [0.0; N_D_FEATURES];
            d_features[0] = headcount;
            d_features[1] = gender_ratio + rng.gen_range(-0.004..0.004);
            for (k, share) in age.iter().enumerate() {
                d_features[2 + k] = share + rng.gen_range(-0.004..0.004);
            }
            for (k, share) in wage.iter().enumerate() {
                d_features[7 + k] = share + rng.gen_range(-0.004..0.004);
            }
            d_features[10] = corr_industrial + rng.gen_range(-0.01..0.01);
            d_features[11] = corr_commercial + rng.gen_range(-0.01..0.01);

            rows.push(DistrictRow {
                timestamp: format_timestamp(t),
                c_features: [hour, temperature, wind_speed, humidity, barometer],
                d_features,
                label,
            });
        }
        out.push(DistrictDataset { district_id: district, rows });
    }
    Ok(out)
}

/// [`generate_synthetic_config`] with default noise.
pub fn generate_synthetic(districts: u32, rows_per_district: usize, seed: u64) -> Result<Vec<DistrictDataset>> {
    generate_synthetic_config(&SyntheticConfig {
        districts,
        rows_per_district,
        seed,
        noise: default_noise(),
    })
}

fn fill_simplex<R: Rng>(rng: &mut R, shares: &mut [f64]) {
    let mut total = 0.0;
    for s in shares.iter_mut() {
        *s = rng.gen_range(0.2..1.0);
        total += *s;
    }
    for s in shares.iter_mut() {
        *s /= total;
    }
}

/// Which feature classes a pooled dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSelection {
    COnly,
    CAndD,
}

impl FeatureSelection {
    pub fn n_features(self) -> usize {
        match self {
            FeatureSelection::COnly => N_C_FEATURES,
            FeatureSelection::CAndD => N_C_FEATURES + N_D_FEATURES,
        }
    }
}

/// Pools districts (in id order, rows in time order) into one column-major
/// dataset: station features first, demographic features after.
pub fn pool_districts(datasets: &[DistrictDataset], selection: FeatureSelection) -> Dataset {
    let n: usize = datasets.iter().map(|d| d.rows.len()).sum();
    let k = selection.n_features();
    let mut features = vec![Vec::with_capacity(n); k];
    let mut labels = Vec::with_capacity(n);
    for ds in datasets {
        for row in &ds.rows {
            for (j, v) in row.c_features.iter().enumerate() {
                features[j].push(*v);
            }
            if selection == FeatureSelection::CAndD {
                for (j, v) in row.d_features.iter().enumerate() {
                    features[N_C_FEATURES + j].push(*v);
                }
            }
            labels.push(row.label);
        }
    }
    Dataset { features, labels }
}
