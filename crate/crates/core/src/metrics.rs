//! Point-forecast accuracy: sMAPE, MASE, OWA, the Naive and Naive2
//! baselines, and per-series rank / percentual-difference statistics.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty forecast horizon")]
    EmptyHorizon,
    #[error("forecast has length {forecast}, truth has length {truth}")]
    LengthMismatch { truth: usize, forecast: usize },
    #[error("seasonal naive error of the history is zero (m = {m})")]
    ZeroScale { m: usize },
    #[error("history of length {len} is too short for seasonality {m}")]
    InsufficientHistory { len: usize, m: usize },
    #[error("naive2 needs two full seasons of length {m}, history has {len}")]
    InsufficientSeasons { len: usize, m: usize },
    #[error("baseline score is zero")]
    ZeroBaseline,
    #[error("empty score table")]
    EmptyTable,
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch { truth: y.len(), forecast: yhat.len() });
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyHorizon);
    }
    Ok(())
}

/// `200/H Σ |y - ŷ| / (|y| + |ŷ|)`; terms with a zero denominator count 0.
pub fn smape(y: &[f64], yhat: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(y, yhat)?;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let denom = a.abs() + b.abs();
            if denom == 0.0 {
                0.0
            } else {
                (a - b).abs() / denom
            }
        })
        .sum();
    Ok(200.0 * total / y.len() as f64)
}

/// In-sample seasonal-naive mean absolute error `1/(T-m) Σ |x_i - x_{i-m}|`.
pub fn seasonal_scale(history: &[f64], m: usize) -> Result<f64, MetricsError> {
    if m == 0 || history.len() <= m {
        return Err(MetricsError::InsufficientHistory { len: history.len(), m });
    }
    let diffs: f64 = history.windows(m + 1).map(|w| (w[m] - w[0]).abs()).sum();
    let scale = diffs / (history.len() - m) as f64;
    if scale == 0.0 {
        return Err(MetricsError::ZeroScale { m });
    }
    Ok(scale)
}

/// Mean absolute error over the horizon, scaled by the seasonal-naive error
/// of the history.
pub fn mase(y: &[f64], yhat: &[f64], history: &[f64], m: usize) -> Result<f64, MetricsError> {
    check_lengths(y, yhat)?;
    let scale = seasonal_scale(history, m)?;
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    Ok(mae / scale)
}

/// The two relative scores `sMAPE / sMAPE_Naive2` and `MASE / MASE_Naive2`.
pub fn owa_parts(smape_m: f64, mase_m: f64, smape_naive2: f64, mase_naive2: f64) -> Result<(f64, f64), MetricsError> {
    if smape_naive2 <= 0.0 || mase_naive2 <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((smape_m / smape_naive2, mase_m / mase_naive2))
}

pub fn owa(smape_m: f64, mase_m: f64, smape_naive2: f64, mase_naive2: f64) -> Result<f64, MetricsError> {
    let (rs, rm) = owa_parts(smape_m, mase_m, smape_naive2, mase_naive2)?;
    Ok(0.5 * (rs + rm))
}

pub fn naive_forecast(history: &[f64], horizon: usize) -> Result<Vec<f64>, MetricsError> {
    let last = *history.last().ok_or(MetricsError::InsufficientHistory { len: 0, m: 1 })?;
    Ok(vec![last; horizon])
}

/// Multiplicative seasonal indices from a classical decomposition: centered
/// moving average of window `m` (2×m for even `m`), per-phase mean of the
/// ratios, normalized to mean 1. Index `k` belongs to positions `i` with
/// `i % m == k`.
pub fn seasonal_indices(history: &[f64], m: usize) -> Result<Vec<f64>, MetricsError> {
    let len = history.len();
    if m < 2 || len < 2 * m {
        return Err(MetricsError::InsufficientSeasons { len, m });
    }
    let half = m / 2;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for i in half..len - half {
        let trend = if m % 2 == 1 {
            history[i - half..=i + half].iter().sum::<f64>() / m as f64
        } else {
            let inner: f64 = history[i - half + 1..i + half].iter().sum();
            (0.5 * history[i - half] + inner + 0.5 * history[i + half]) / m as f64
        };
        sums[i % m] += history[i] / trend;
        counts[i % m] += 1;
    }
    let raw: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mean = raw.iter().sum::<f64>() / m as f64;
    Ok(raw.iter().map(|r| r / mean).collect())
}

/// Naive forecast on the seasonally adjusted history, reseasonalized. Falls
/// back to the plain naive forecast when `m = 1` or when the history has
/// non-positive values, for which multiplicative indices are undefined.
pub fn naive2_forecast(history: &[f64], horizon: usize, m: usize) -> Result<Vec<f64>, MetricsError> {
    if m <= 1 || history.iter().any(|&x| x <= 0.0) {
        return naive_forecast(history, horizon);
    }
    let idx = seasonal_indices(history, m)?;
    let len = history.len();
    let level = history[len - 1] / idx[(len - 1) % m];
    Ok((0..horizon).map(|h| level * idx[(len + h) % m]).collect())
}

/// Average rank (ties share the mean rank) and average percentual difference
/// `(1 - best / own) · 100` per method, over the columns of a
/// `methods × series` score table where lower is better.
pub fn rank_and_diff(scores: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let methods = scores.len();
    let series = scores.first().map_or(0, Vec::len);
    if methods == 0 || series == 0 {
        return Err(MetricsError::EmptyTable);
    }
    if let Some(row) = scores.iter().find(|r| r.len() != series) {
        return Err(MetricsError::LengthMismatch { truth: series, forecast: row.len() });
    }
    let mut ranks = vec![0.0; methods];
    let mut diffs = vec![0.0; methods];
    for s in 0..series {
        let col: Vec<f64> = scores.iter().map(|r| r[s]).collect();
        let best = col.iter().copied().fold(f64::INFINITY, f64::min);
        for (m, &v) in col.iter().enumerate() {
            let below = col.iter().filter(|&&o| o < v).count();
            let equal = col.iter().filter(|&&o| o == v).count();
            ranks[m] += below as f64 + (equal as f64 + 1.0) / 2.0;
            diffs[m] += if v == best { 0.0 } else { (1.0 - best / v) * 100.0 };
        }
    }
    let n = series as f64;
    Ok((ranks.iter().map(|r| r / n).collect(), diffs.iter().map(|d| d / n).collect()))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeriesScore {
    pub series_id: String,
    pub method: String,
    pub smape: f64,
    pub mase: f64,
}

/// Aggregate of per-series scores for several methods against Naive2.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<SeriesScore>,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_smape: f64,
    pub mean_mase: f64,
    /// Relative to Naive2; absent when the baseline means are zero.
    pub owa: Option<f64>,
    pub avg_rank: f64,
    pub avg_pct_diff: f64,
}

impl ScoreReport {
    /// `rows` must hold one entry per (method, series) pair, including a
    /// `Naive2` method when OWA is wanted. Methods keep first-seen order.
    pub fn build(rows: Vec<SeriesScore>, baseline: &str) -> Result<Self, MetricsError> {
        let mut methods: Vec<String> = Vec::new();
        let mut series: Vec<String> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
            if !series.contains(&r.series_id) {
                series.push(r.series_id.clone());
            }
        }
        let lookup = |m: &str, s: &str| rows.iter().find(|r| r.method == m && r.series_id == s);
        let mut table = Vec::with_capacity(methods.len());
        for m in &methods {
            let row: Option<Vec<f64>> = series.iter().map(|s| lookup(m, s).map(|r| r.smape)).collect();
            table.push(row.ok_or(MetricsError::EmptyTable)?);
        }
        let (ranks, diffs) = rank_and_diff(&table)?;
        let mean = |m: &str, f: fn(&SeriesScore) -> f64| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.method == m).map(f).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let base = methods.iter().any(|m| m == baseline).then(|| (mean(baseline, |r| r.smape), mean(baseline, |r| r.mase)));
        let summaries = methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (s, a) = (mean(m, |r| r.smape), mean(m, |r| r.mase));
                MethodSummary {
                    method: m.clone(),
                    mean_smape: s,
                    mean_mase: a,
                    owa: base.and_then(|(bs, bm)| owa(s, a, bs, bm).ok()),
                    avg_rank: ranks[i],
                    avg_pct_diff: diffs[i],
                }
            })
            .collect();
        Ok(Self { rows, methods: summaries })
    }
}
