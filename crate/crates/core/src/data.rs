//! Series records, CSV ingestion, synthetic generators and train/validation/
//! test splits.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },
    #[error("series {id:?} has no values")]
    EmptySeries { id: String },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
}

/// Sampling frequency; determines the default seasonality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Frequency {
    Yearly,
    Quarterly,
    Monthly,
    Weekly,
    Daily,
    Hourly,
    Custom(usize),
}

impl Frequency {
    pub fn seasonality(self) -> usize {
        match self {
            Frequency::Yearly | Frequency::Weekly | Frequency::Daily => 1,
            Frequency::Quarterly => 4,
            Frequency::Monthly => 12,
            Frequency::Hourly => 24,
            Frequency::Custom(m) => m,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frequency::Yearly => f.write_str("yearly"),
            Frequency::Quarterly => f.write_str("quarterly"),
            Frequency::Monthly => f.write_str("monthly"),
            Frequency::Weekly => f.write_str("weekly"),
            Frequency::Daily => f.write_str("daily"),
            Frequency::Hourly => f.write_str("hourly"),
            Frequency::Custom(m) => write!(f, "custom({m})"),
        }
    }
}

impl FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "yearly" => Frequency::Yearly,
            "quarterly" => Frequency::Quarterly,
            "monthly" => Frequency::Monthly,
            "weekly" => Frequency::Weekly,
            "daily" => Frequency::Daily,
            "hourly" => Frequency::Hourly,
            other => {
                let m = other
                    .strip_prefix("custom(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|m| m.parse::<usize>().ok())
                    .filter(|&m| m >= 1)
                    .ok_or_else(|| format!("unknown frequency {s:?}"))?;
                Frequency::Custom(m)
            }
        })
    }
}

impl TryFrom<String> for Frequency {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Frequency> for String {
    fn from(f: Frequency) -> Self {
        f.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub id: String,
    pub frequency: Frequency,
    pub horizon: usize,
    pub values: Vec<f64>,
}

fn parse_err(line: u64, column: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { line, column, message: message.into() }
}

/// Reads `id,frequency,horizon,v1,v2,…` rows (header first, ragged rows
/// allowed, trailing empty cells ignored). Error positions are 1-based.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SeriesRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, 1, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let id = cell(0).to_string();
        let frequency: Frequency = cell(1).parse().map_err(|m: String| parse_err(line, 2, m))?;
        let horizon: usize = cell(2)
            .parse()
            .ok()
            .filter(|&h| h >= 1)
            .ok_or_else(|| parse_err(line, 3, format!("invalid horizon {:?}", cell(2))))?;
        let mut cells: Vec<&str> = row.iter().skip(3).map(str::trim).collect();
        while cells.last() == Some(&"") {
            cells.pop();
        }
        let values = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, i + 4, format!("invalid value {c:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.is_empty() {
            return Err(DataError::EmptySeries { id });
        }
        out.push(SeriesRecord { id, frequency, horizon, values });
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<Vec<SeriesRecord>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv(std::io::BufReader::new(file))
}

/// Canonical form: header sized to the longest series, shortest
/// round-tripping float text, no padding on short rows.
pub fn write_csv<W: Write>(writer: W, records: &[SeriesRecord]) -> Result<(), DataError> {
    let io = |e: csv::Error| parse_err(0, 0, e.to_string());
    let width = records.iter().map(|r| r.values.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let mut header = vec!["id".to_string(), "frequency".to_string(), "horizon".to_string()];
    header.extend((1..=width).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(io)?;
    for r in records {
        let mut row = vec![r.id.clone(), r.frequency.to_string(), r.horizon.to_string()];
        row.extend(r.values.iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|source| DataError::Io { path: "<csv>".into(), source })
}

/// Parameters of `level + amplitude·sin(2πt/period) + trend·t + N(0, noise_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalSpec {
    pub length: usize,
    pub period: usize,
    pub amplitude: f64,
    pub trend: f64,
    pub noise_sd: f64,
    pub level: f64,
}

pub fn synth_seasonal(spec: &SeasonalSpec, seed: u64) -> Result<SeriesRecord, DataError> {
    if spec.length == 0 || spec.period == 0 {
        return Err(DataError::InvalidParameter("length and period must be positive".into()));
    }
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.length)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * (t % spec.period) as f64 / spec.period as f64;
            let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            spec.level + spec.amplitude * phase.sin() + spec.trend * t as f64 + eps
        })
        .collect();
    let frequency = if spec.period == 12 { Frequency::Monthly } else { Frequency::Custom(spec.period) };
    Ok(SeriesRecord { id: format!("seasonal-{seed}"), frequency, horizon: 1, values })
}

/// Zero-inflated demand: each step has demand with probability
/// `demand_prob`, and its size is LogNormal(`mu`, `sigma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpySpec {
    pub length: usize,
    pub demand_prob: f64,
    pub mu: f64,
    pub sigma: f64,
}

pub fn synth_lumpy(spec: &LumpySpec, seed: u64) -> Result<SeriesRecord, DataError> {
    let invalid = |e: String| DataError::InvalidParameter(e);
    let occurs = Bernoulli::new(spec.demand_prob).map_err(|e| invalid(e.to_string()))?;
    let size = LogNormal::new(spec.mu, spec.sigma).map_err(|e| invalid(e.to_string()))?;
    if spec.length == 0 {
        return Err(invalid("length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.length)
        .map(|_| if occurs.sample(&mut rng) { size.sample(&mut rng) } else { 0.0 })
        .collect();
    Ok(SeriesRecord { id: format!("lumpy-{seed}"), frequency: Frequency::Daily, horizon: 1, values })
}

/// Held-out fractions; the held-out blocks are the final observations,
/// validation before test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.2, val_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

fn floor_fraction(len: usize, fraction: f64) -> usize {
    // guard against products like 0.2 * 100 landing just under an integer
    (fraction * len as f64 + 1e-9).floor() as usize
}

pub fn split(len: usize, spec: &SplitSpec) -> Split {
    let test = floor_fraction(len, spec.test_fraction).min(len);
    let val = floor_fraction(len, spec.val_fraction).min(len - test);
    let train = len - test - val;
    Split { train: 0..train, val: train..train + val, test: train + val..len }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io = |source: std::io::Error| DataError::Io { path: path.display().to_string(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Point forecasts per series id, in step order.
pub type Forecasts = BTreeMap<String, Vec<f64>>;

/// `series_id,step,value` with 1-based steps.
pub fn write_forecasts<W: Write>(writer: W, forecasts: &Forecasts) -> Result<(), DataError> {
    let err = |e: csv::Error| parse_err(0, 0, e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "step", "value"]).map_err(err)?;
    for (id, values) in forecasts {
        for (k, v) in values.iter().enumerate() {
            w.write_record([id.as_str(), &(k + 1).to_string(), &v.to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|source| DataError::Io { path: "<csv>".into(), source })
}

pub fn read_forecasts<R: Read>(reader: R) -> Result<Forecasts, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut steps: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), 1, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(0).unwrap_or("").trim().to_string();
        let step: usize = row
            .get(1)
            .and_then(|c| c.trim().parse().ok())
            .filter(|&s| s >= 1)
            .ok_or_else(|| parse_err(line, 2, "invalid step"))?;
        let value: f64 = row
            .get(2)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| parse_err(line, 3, "invalid value"))?;
        if steps.entry(id.clone()).or_default().insert(step, value).is_some() {
            return Err(parse_err(line, 2, format!("duplicate step {step} for {id:?}")));
        }
    }
    steps
        .into_iter()
        .map(|(id, by_step)| {
            if by_step.keys().copied().ne(1..=by_step.len()) {
                return Err(parse_err(0, 2, format!("steps of {id:?} are not 1..{}", by_step.len())));
            }
            Ok((id, by_step.into_values().collect()))
        })
        .collect()
}
