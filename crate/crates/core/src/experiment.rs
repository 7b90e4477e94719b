//! Experiment orchestration: lookback selection on the validation block,
//! rolling test evaluation against Naive baselines, the variant ablation
//! grid, ensembles and the persistence runtime benchmark.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::config::Config;
use crate::data::{split, DataError, Forecasts, SeriesRecord, SplitSpec};
use crate::error::Error;
use crate::metrics::{mase, naive2_forecast, naive_forecast, smape, ScoreReport, SeriesScore};
use crate::models::{Model, ModelSpec, Variant};
use crate::persistence::lower_star_barcode;
use crate::train::{ensemble_forecast, fit, forecast_next, rolling_forecast, Normalization, Scaler, TrainData, TrainReport};

/// Validation score of one lookback candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub lookback: usize,
    /// Mean one-step sMAPE over the validation blocks; absent when no series
    /// has a validation block preceded by a full lookback.
    pub val_smape: Option<f64>,
}

/// The selected model with the scalers fitted to each training region.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: Model,
    pub normalization: Normalization,
    pub scalers: BTreeMap<String, Scaler>,
    pub report: TrainReport,
    pub candidates: Vec<Candidate>,
}

impl TrainedRun {
    pub fn scaler_for(&self, record: &SeriesRecord, history: &[f64]) -> Scaler {
        self.scalers.get(&record.id).copied().unwrap_or_else(|| Scaler::fit(self.normalization, history))
    }
}

fn check_unique(records: &[SeriesRecord]) -> Result<(), Error> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(DataError::InvalidParameter(format!("duplicate series id {:?}", r.id)).into());
        }
    }
    if records.is_empty() {
        return Err(DataError::InvalidParameter("no series".into()).into());
    }
    Ok(())
}

fn spec_for(base: &ModelSpec, lookback: usize) -> ModelSpec {
    let window_len = base.window_len.filter(|&n| n <= lookback);
    ModelSpec { lookback, window_len, ..*base }
}

/// Trains one model per lookback candidate on the pooled training regions,
/// scores each by rolling one-step sMAPE on the validation blocks and keeps
/// the best (earliest on ties). Every candidate uses the same `seed`.
pub fn train_run(records: &[SeriesRecord], cfg: &Config, seed: u64) -> Result<TrainedRun, Error> {
    check_unique(records)?;
    let lookbacks = if cfg.cv.lookbacks.is_empty() { vec![cfg.model.lookback] } else { cfg.cv.lookbacks.clone() };
    let splits: Vec<_> = records.iter().map(|r| split(r.values.len(), &cfg.split)).collect();
    let train: Vec<Vec<f64>> = records.iter().zip(&splits).map(|(r, s)| r.values[s.train.clone()].to_vec()).collect();
    let norm = cfg.train.normalization;

    let runs = lookbacks
        .par_iter()
        .map(|&t| -> Result<(Model, TrainReport, Candidate), Error> {
            let spec = spec_for(&cfg.model, t);
            let data = TrainData::new(train.clone(), norm, &spec)?;
            let (model, report) = fit(spec, &data, &cfg.train, seed)?;
            let mut scores = Vec::new();
            for ((r, s), sc) in records.iter().zip(&splits).zip(&data.scalers) {
                if s.val.is_empty() || s.val.start < t {
                    continue;
                }
                let yhat = rolling_forecast(&model, sc, &r.values, s.val.clone())?;
                scores.push(smape(&r.values[s.val.clone()], &yhat)?);
            }
            let val_smape = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
            Ok((model, report, Candidate { lookback: t, val_smape }))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let candidates: Vec<Candidate> = runs.iter().map(|r| r.2).collect();
    let best = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.val_smape.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map_or(0, |(i, _)| i);
    let (model, report, _) = runs.into_iter().nth(best).expect("at least one candidate");
    let scalers = records.iter().zip(&train).map(|(r, s)| (r.id.clone(), Scaler::fit(norm, s))).collect();
    Ok(TrainedRun { model, normalization: norm, scalers, report, candidates })
}

/// Rolling one-step forecasts over each series' test block.
pub fn rolling_test_forecasts(run: &TrainedRun, records: &[SeriesRecord], split_spec: &SplitSpec) -> Result<Forecasts, Error> {
    records
        .iter()
        .map(|r| {
            let s = split(r.values.len(), split_spec);
            let scaler = run.scaler_for(r, &r.values[..s.test.start]);
            Ok((r.id.clone(), rolling_forecast(&run.model, &scaler, &r.values, s.test)?))
        })
        .collect()
}

/// How forecasts relate to the truth series they are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// One multi-step forecast of the final `k` values.
    Holdout,
    /// One-step forecasts of each of the final `k` values from true history.
    Rolling,
}

/// Naive and Naive2 forecasts of the final `k` values of every series,
/// where `k` comes from `lengths`.
pub fn baseline_forecasts(truth: &[SeriesRecord], lengths: &BTreeMap<String, usize>, mode: EvalMode) -> Result<(Forecasts, Forecasts), Error> {
    let mut naive = Forecasts::new();
    let mut naive2 = Forecasts::new();
    for r in truth {
        let Some(&k) = lengths.get(&r.id) else { continue };
        let origin = truth_origin(r, k)?;
        let m = r.frequency.seasonality();
        let (a, b) = match mode {
            EvalMode::Holdout => (naive_forecast(&r.values[..origin], k)?, naive2_forecast(&r.values[..origin], k, m)?),
            EvalMode::Rolling => {
                let mut a = Vec::with_capacity(k);
                let mut b = Vec::with_capacity(k);
                for i in origin..r.values.len() {
                    a.push(naive_forecast(&r.values[..i], 1)?[0]);
                    b.push(naive2_forecast(&r.values[..i], 1, m)?[0]);
                }
                (a, b)
            }
        };
        naive.insert(r.id.clone(), a);
        naive2.insert(r.id.clone(), b);
    }
    Ok((naive, naive2))
}

fn truth_origin(r: &SeriesRecord, k: usize) -> Result<usize, Error> {
    if k == 0 || k >= r.values.len() {
        return Err(DataError::InvalidParameter(format!("series {:?} has {} values, cannot hold out {k}", r.id, r.values.len())).into());
    }
    Ok(r.values.len() - k)
}

/// Scores `forecasts` against the final values of the matching truth
/// series; MASE is scaled by the preceding history with the series'
/// seasonality.
pub fn score_forecasts(truth: &[SeriesRecord], forecasts: &Forecasts, method: &str) -> Result<Vec<SeriesScore>, Error> {
    let by_id: BTreeMap<&str, &SeriesRecord> = truth.iter().map(|r| (r.id.as_str(), r)).collect();
    forecasts
        .iter()
        .map(|(id, yhat)| {
            let r = by_id
                .get(id.as_str())
                .ok_or_else(|| DataError::InvalidParameter(format!("no truth series for {id:?}")))?;
            let origin = truth_origin(r, yhat.len())?;
            let y = &r.values[origin..];
            let m = r.frequency.seasonality();
            Ok(SeriesScore { series_id: id.clone(), method: method.to_string(), smape: smape(y, yhat)?, mase: mase(y, yhat, &r.values[..origin], m)? })
        })
        .collect()
}

/// Score table of `methods` plus Naive and Naive2, with OWA against Naive2.
pub fn evaluate(truth: &[SeriesRecord], methods: &[(String, Forecasts)], mode: EvalMode) -> Result<ScoreReport, Error> {
    let mut lengths = BTreeMap::new();
    for (_, f) in methods {
        for (id, v) in f {
            if let Some(prev) = lengths.insert(id.clone(), v.len()) {
                if prev != v.len() {
                    return Err(DataError::InvalidParameter(format!("forecasts for {id:?} differ in length")).into());
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (name, f) in methods {
        rows.extend(score_forecasts(truth, f, name)?);
    }
    let (naive, naive2) = baseline_forecasts(truth, &lengths, mode)?;
    rows.extend(score_forecasts(truth, &naive, "Naive")?);
    rows.extend(score_forecasts(truth, &naive2, "Naive2")?);
    Ok(ScoreReport::build(rows, "Naive2")?)
}

/// Test-block outcome of the full protocol on a set of series.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub run: TrainedRun,
    pub forecasts: Forecasts,
    pub report: ScoreReport,
}

/// Lookback selection, then rolling one-step test forecasts with the chosen
/// model, scored alongside rolling Naive and Naive2.
pub fn run_protocol(records: &[SeriesRecord], cfg: &Config, seed: u64, method: &str) -> Result<ProtocolOutcome, Error> {
    let run = train_run(records, cfg, seed)?;
    let forecasts = rolling_test_forecasts(&run, records, &cfg.split)?;
    let report = evaluate(records, &[(method.to_string(), forecasts.clone())], EvalMode::Rolling)?;
    Ok(ProtocolOutcome { run, forecasts, report })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub closed_form_params: usize,
    pub lookback: usize,
    pub smape: f64,
    pub mase: f64,
    pub owa: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Whether +TopAttn with zero encoder layers reproduces +Top exactly.
    pub passthrough_matches: bool,
}

/// Runs the protocol for every variant on the same data and seed.
pub fn run_ablation(records: &[SeriesRecord], cfg: &Config, seed: u64) -> Result<AblationReport, Error> {
    let rows = Variant::ALL
        .par_iter()
        .map(|&variant| -> Result<AblationRow, Error> {
            let mut c = cfg.clone();
            c.model.variant = variant;
            let out = run_protocol(records, &c, seed, variant.label())?;
            let summary = out.report.methods.iter().find(|m| m.method == variant.label()).expect("method row");
            Ok(AblationRow {
                variant: variant.label().to_string(),
                params: out.run.model.params.scalar_count(),
                closed_form_params: out.run.model.spec.scalar_count()?,
                lookback: out.run.model.spec.lookback,
                smape: summary.mean_smape,
                mase: summary.mean_mase,
                owa: summary.owa,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let passthrough_matches = passthrough_check(records, cfg, seed)?;
    Ok(AblationReport { rows, passthrough_matches })
}

/// Builds +Top and +TopAttn with an empty encoder from the same seed and
/// compares parameters and predictions on every training lookback.
pub fn passthrough_check(records: &[SeriesRecord], cfg: &Config, seed: u64) -> Result<bool, Error> {
    let top = ModelSpec { variant: Variant::Top, ..cfg.model };
    let top_attn = ModelSpec { variant: Variant::TopAttn, encoder_layers: 0, ..cfg.model };
    let train: Vec<Vec<f64>> = records.iter().map(|r| r.values[split(r.values.len(), &cfg.split).train].to_vec()).collect();
    let data = TrainData::new(train, cfg.train.normalization, &top)?;
    let pool = data.pool_barcodes(&top, 256)?;
    let a = Model::init(top, &pool, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let b = Model::init(top_attn, &pool, &mut ChaCha8Rng::seed_from_u64(seed))?;
    if a.params.scalar_count() != b.params.scalar_count() || top.scalar_count()? != top_attn.scalar_count()? {
        return Ok(false);
    }
    let same_values = a.params.params().iter().zip(b.params.params()).all(|(p, q)| p.value == q.value);
    let t = top.lookback;
    let mut xs = Vec::new();
    for (s, sc) in data.series.iter().zip(&data.scalers) {
        for start in 0..s.len().saturating_sub(t - 1) {
            let w = &s[start..start + t];
            xs.extend(Scaler::apply(w, sc.window_params(w)));
        }
    }
    if xs.is_empty() {
        return Ok(same_values);
    }
    let x = Tensor::new(vec![xs.len() / t, t], xs).map_err(crate::models::ModelError::from)?;
    Ok(same_values && a.predict(&x)? == b.predict(&x)?)
}

/// One ensemble member: a name and its holdout forecasts.
pub type Member = (String, Forecasts);

/// Trains one model per (lookback multiple of `H`, seed) on every series
/// without its final `H` values and forecasts those values. Members train
/// concurrently; the output order is multiplier-major, seed-minor.
pub fn train_ensemble(records: &[SeriesRecord], cfg: &Config) -> Result<Vec<Member>, Error> {
    check_unique(records)?;
    let h = cfg.model.horizon;
    let cut: Vec<SeriesRecord> = records
        .iter()
        .map(|r| {
            truth_origin(r, h)?;
            Ok(SeriesRecord { values: r.values[..r.values.len() - h].to_vec(), ..r.clone() })
        })
        .collect::<Result<_, Error>>()?;
    let grid: Vec<(usize, u64)> =
        cfg.ensemble.lookback_multipliers.iter().flat_map(|&k| cfg.ensemble.seeds.iter().map(move |&s| (k, s))).collect();
    grid.par_iter()
        .map(|&(k, s)| {
            let mut c = cfg.clone();
            c.cv.lookbacks.clear();
            c.model = spec_for(&cfg.model, k * h);
            c.split = SplitSpec { test_fraction: 0.0, val_fraction: 0.0 };
            let run = train_run(&cut, &c, s)?;
            let forecasts = cut
                .iter()
                .map(|r| Ok((r.id.clone(), forecast_next(&run.model, &run.scaler_for(r, &r.values), &r.values)?)))
                .collect::<Result<Forecasts, Error>>()?;
            Ok((format!("lookback{}h-seed{s}", k), forecasts))
        })
        .collect()
}

/// Element-wise median over members, per series. Every member must cover
/// the same series.
pub fn median_forecasts(members: &[&Forecasts]) -> Result<Forecasts, Error> {
    let first = members.first().ok_or(crate::train::TrainError::EmptyEnsemble)?;
    first
        .keys()
        .map(|id| {
            let cols: Vec<Vec<f64>> = members
                .iter()
                .map(|m| m.get(id).cloned().ok_or_else(|| DataError::InvalidParameter(format!("a member has no forecast for {id:?}"))))
                .collect::<Result<_, _>>()?;
            Ok((id.clone(), ensemble_forecast(&cols)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct CurvePoint {
    pub size: usize,
    pub smape: f64,
    pub mase: f64,
    pub owa: f64,
}

/// Mean sMAPE, MASE and OWA of median ensembles of each size, averaged over
/// `draws` random member subsets per size. Members are put in a canonical
/// order first so the result does not depend on the order they are given in.
pub fn ensemble_curve(members: &[Member], truth: &[SeriesRecord], draws: usize, seed: u64, mode: EvalMode) -> Result<Vec<CurvePoint>, Error> {
    let mut sorted: Vec<&Member> = members.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| canonical_cmp(&a.1, &b.1)));
    let first = &sorted.first().ok_or(crate::train::TrainError::EmptyEnsemble)?.1;
    let lengths: BTreeMap<String, usize> = first.iter().map(|(id, v)| (id.clone(), v.len())).collect();
    let (_, naive2) = baseline_forecasts(truth, &lengths, mode)?;
    let base = mean_scores(&score_forecasts(truth, &naive2, "Naive2")?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sorted.len());
    for size in 1..=sorted.len() {
        let mut acc = (0.0, 0.0);
        for _ in 0..draws.max(1) {
            let mut idx = sample(&mut rng, sorted.len(), size).into_vec();
            idx.sort_unstable();
            let chosen: Vec<&Forecasts> = idx.iter().map(|&i| &sorted[i].1).collect();
            let (s, m) = mean_scores(&score_forecasts(truth, &median_forecasts(&chosen)?, "ensemble")?);
            acc.0 += s;
            acc.1 += m;
        }
        let n = draws.max(1) as f64;
        let (s, m) = (acc.0 / n, acc.1 / n);
        out.push(CurvePoint { size, smape: s, mase: m, owa: crate::metrics::owa(s, m, base.0, base.1)? });
    }
    Ok(out)
}

fn canonical_cmp(a: &Forecasts, b: &Forecasts) -> std::cmp::Ordering {
    let flat = |f: &Forecasts| f.iter().flat_map(|(id, v)| v.iter().map(move |x| (id.clone(), x.to_bits()))).collect::<Vec<_>>();
    flat(a).cmp(&flat(b))
}

fn mean_scores(rows: &[SeriesScore]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (rows.iter().map(|r| r.smape).sum::<f64>() / n, rows.iter().map(|r| r.mase).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// Median over repetitions of the time per barcode, in seconds.
    pub median_seconds: f64,
    /// Ratio to the previous size; absent for the first.
    pub ratio: Option<f64>,
}

/// Times `lower_star_barcode` on Gaussian series of each size. Each
/// repetition averages an inner loop sized to about `work` points so short
/// inputs still register on the clock.
pub fn bench_ph(sizes: &[usize], reps: usize, work: usize, seed: u64) -> Result<Vec<BenchRow>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<BenchRow> = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 {
            return Err(Error::Usage("benchmark sizes must be positive".into()));
        }
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let inner = work.div_ceil(n).max(1);
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            for _ in 0..inner {
                std::hint::black_box(lower_star_barcode(std::hint::black_box(&x)).map_err(|e| DataError::InvalidParameter(e.to_string()))?);
            }
            times.push(start.elapsed().as_secs_f64() / inner as f64);
        }
        times.sort_by(f64::total_cmp);
        let median = if times.len() % 2 == 1 { times[times.len() / 2] } else { 0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2]) };
        let ratio = rows.last().map(|prev| median / prev.median_seconds);
        rows.push(BenchRow { n, median_seconds: median, ratio });
    }
    Ok(rows)
}
