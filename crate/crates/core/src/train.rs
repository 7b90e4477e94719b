//! Optimization: losses, Adam with per-group cosine-annealed learning rates,
//! batch sampling, the training loop, rolling forecasts and ensembling.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::models::{Model, ModelError, ModelSpec};
use crate::params::{ParamGroup, ParamSet};
use crate::windowing::{BarcodeCache, WindowedBarcodes};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("series of length {len} is too short for lookback {t} and horizon {h}")]
    SeriesTooShort { len: usize, t: usize, h: usize },
    #[error("forecast region starts at {start}, before a full lookback of {t}")]
    InsufficientHistory { start: usize, t: usize },
    #[error("loss became non-finite ({loss}) at iteration {iteration}")]
    DivergenceDetected { iteration: usize, loss: f64 },
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("member {index} has length {got}, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    Smape,
}

impl Loss {
    pub fn on_graph<'g>(self, yhat: Var<'g>, y: Var<'g>) -> Result<Var<'g>, AutodiffError> {
        match self {
            Loss::Mse => yhat.sub(y)?.square()?.mean(),
            Loss::Smape => {
                let num = yhat.sub(y)?.abs()?;
                let den = y.abs()?.add(yhat.abs()?)?;
                num.div_or_zero(den)?.mean()?.mul_scalar(200.0)
            }
        }
    }
}

pub fn loss_mse(yhat: &[f64], y: &[f64]) -> Result<f64, TrainError> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(TrainError::LengthMismatch { index: 0, expected: y.len(), got: yhat.len() });
    }
    Ok(yhat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

pub fn loss_smape(yhat: &[f64], y: &[f64]) -> Result<f64, TrainError> {
    crate::metrics::smape(y, yhat).map_err(|_| TrainError::LengthMismatch { index: 0, expected: y.len(), got: yhat.len() })
}

/// Base learning rate per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupRates {
    pub topvec: f64,
    pub encoder: f64,
    pub mlp: f64,
    pub backbone: f64,
}

impl Default for GroupRates {
    fn default() -> Self {
        Self { topvec: 9e-2, encoder: 5e-2, mlp: 9e-2, backbone: 1e-2 }
    }
}

impl GroupRates {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::TopVec => self.topvec,
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Mlp => self.mlp,
            ParamGroup::Backbone => self.backbone,
        }
    }
}

/// Cosine annealing from the base rates at `t = 0` to zero at `t = total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub total: usize,
    pub base: GroupRates,
}

impl Schedule {
    pub fn factor(&self, t: usize) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        let frac = t.min(self.total) as f64 / self.total as f64;
        0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn lr(&self, t: usize, group: ParamGroup) -> f64 {
        if t >= self.total {
            return 0.0;
        }
        self.base.get(group) * self.factor(t)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with bias-corrected moments; `lr` gives the rate of each
    /// group for this step.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: impl Fn(ParamGroup) -> f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            let rate = lr(p.group);
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (k, x) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let update = rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *x -= update;
            }
        }
    }
}

/// Uniform random lookback/target slices of one series; returns the start
/// offsets with the `batch × T` inputs and `batch × H` targets.
pub fn sample_batch<R: Rng>(
    series: &[f64],
    t: usize,
    h: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Tensor, Tensor), TrainError> {
    if series.len() < t + h {
        return Err(TrainError::SeriesTooShort { len: series.len(), t, h });
    }
    let starts: Vec<usize> = (0..batch).map(|_| rng.random_range(0..=series.len() - t - h)).collect();
    let x = starts.iter().flat_map(|&s| series[s..s + t].iter().copied()).collect();
    let y = starts.iter().flat_map(|&s| series[s + t..s + t + h].iter().copied()).collect();
    Ok((starts, Tensor::new(vec![batch, t], x)?, Tensor::new(vec![batch, h], y)?))
}

/// Input normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// z-score with mean and standard deviation of the training region.
    Global,
    /// Each lookback and its target divided by the lookback's max |x|.
    WindowMaxAbs,
}

/// A fitted normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaler {
    Affine { shift: f64, scale: f64 },
    WindowMaxAbs,
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler::Affine { shift: 0.0, scale: 1.0 }
    }

    pub fn fit(norm: Normalization, train: &[f64]) -> Self {
        match norm {
            Normalization::None => Self::identity(),
            Normalization::WindowMaxAbs => Scaler::WindowMaxAbs,
            Normalization::Global => {
                let n = train.len().max(1) as f64;
                let mean = train.iter().sum::<f64>() / n;
                let sd = (train.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                Scaler::Affine { shift: mean, scale: if sd > 0.0 { sd } else { 1.0 } }
            }
        }
    }

    /// Whether the transform is the same for every window, so barcodes can
    /// be shared by position.
    pub fn is_global(&self) -> bool {
        matches!(self, Scaler::Affine { .. })
    }

    /// `(shift, scale)` used for a lookback window.
    pub fn window_params(&self, window: &[f64]) -> (f64, f64) {
        match *self {
            Scaler::Affine { shift, scale } => (shift, scale),
            Scaler::WindowMaxAbs => {
                let m = window.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                (0.0, if m > 0.0 { m } else { 1.0 })
            }
        }
    }

    pub fn apply(values: &[f64], (shift, scale): (f64, f64)) -> Vec<f64> {
        values.iter().map(|x| (x - shift) / scale).collect()
    }

    pub fn invert(values: &[f64], (shift, scale): (f64, f64)) -> Vec<f64> {
        values.iter().map(|x| x * scale + shift).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub normalization: Normalization,
    pub rates: GroupRates,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 1500, batch_size: 30, loss: Loss::Mse, normalization: Normalization::Global, rates: GroupRates::default() }
    }
}

/// Training series with their fitted normalization and, when the
/// normalization is global, per-position barcode caches.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub series: Vec<Vec<f64>>,
    pub scalers: Vec<Scaler>,
    caches: Option<Vec<Option<BarcodeCache>>>,
}

impl TrainData {
    /// `series` are raw training regions; each gets its own fitted scaler.
    pub fn new(series: Vec<Vec<f64>>, norm: Normalization, spec: &ModelSpec) -> Result<Self, TrainError> {
        let scalers: Vec<Scaler> = series.iter().map(|s| Scaler::fit(norm, s)).collect();
        let needs = matches!(spec.variant.aux_kind(), Some(crate::attention::AuxKind::Top | crate::attention::AuxKind::TopAttn));
        let caches = if needs && norm != Normalization::WindowMaxAbs {
            let n = spec.window_len();
            let build = |(s, sc): (&Vec<f64>, &Scaler)| -> Result<Option<BarcodeCache>, TrainError> {
                if s.len() < spec.lookback + spec.horizon {
                    return Ok(None);
                }
                let scaled = Scaler::apply(s, sc.window_params(&[]));
                Ok(Some(BarcodeCache::build(&scaled, n).map_err(ModelError::from)?))
            };
            Some(series.iter().zip(&scalers).map(build).collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };
        Ok(Self { series, scalers, caches })
    }

    fn usable(&self, t: usize, h: usize) -> Vec<usize> {
        (0..self.series.len()).filter(|&i| self.series[i].len() >= t + h).collect()
    }

    /// Normalized batch `(x, y, barcodes)`; barcodes are empty when the model
    /// does not use them.
    pub fn batch<R: Rng>(&self, model: &Model, batch: usize, rng: &mut R) -> Result<(Tensor, Tensor, Vec<WindowedBarcodes>), TrainError> {
        let (t, h) = (model.spec.lookback, model.spec.horizon);
        let usable = self.usable(t, h);
        if usable.is_empty() {
            let len = self.series.iter().map(Vec::len).max().unwrap_or(0);
            return Err(TrainError::SeriesTooShort { len, t, h });
        }
        let mut xs = Vec::with_capacity(batch * t);
        let mut ys = Vec::with_capacity(batch * h);
        let mut codes = Vec::new();
        let plan = if model.needs_barcodes() { Some(model.spec.plan()?) } else { None };
        for _ in 0..batch {
            let i = usable[rng.random_range(0..usable.len())];
            let s = &self.series[i];
            let start = rng.random_range(0..=s.len() - t - h);
            let window = &s[start..start + t];
            let params = self.scalers[i].window_params(window);
            xs.extend(Scaler::apply(window, params));
            ys.extend(Scaler::apply(&s[start + t..start + t + h], params));
            if let (Some(plan), Some(caches)) = (plan.as_ref(), self.caches.as_ref()) {
                codes.push(caches[i].as_ref().expect("usable series are cached").lookback(start, plan));
            }
        }
        let x = Tensor::new(vec![batch, t], xs)?;
        let y = Tensor::new(vec![batch, h], ys)?;
        if plan.is_some() && self.caches.is_none() {
            codes = model.barcodes(&x)?;
        }
        Ok((x, y, codes))
    }

    /// All normalized lookbacks of the series, for barcode pools.
    pub fn pool_barcodes(&self, model_spec: &ModelSpec, max_windows: usize) -> Result<Vec<WindowedBarcodes>, TrainError> {
        let plan = model_spec.plan()?;
        let (t, h) = (model_spec.lookback, model_spec.horizon);
        let mut out = Vec::new();
        for i in self.usable(t, h) {
            let s = &self.series[i];
            let last = s.len() - t - h;
            let stride = (last + 1).div_ceil(max_windows.max(1)).max(1);
            for start in (0..=last).step_by(stride) {
                let window = &s[start..start + t];
                let scaled = Scaler::apply(window, self.scalers[i].window_params(window));
                out.push(crate::windowing::windowed_barcodes(&scaled, &plan).map_err(ModelError::from)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Builds a model and fits it; the RNG seeded with `seed` drives bank and
/// weight initialization and then batch sampling.
pub fn fit(spec: ModelSpec, data: &TrainData, cfg: &TrainConfig, seed: u64) -> Result<(Model, TrainReport), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = if matches!(spec.variant.aux_kind(), Some(crate::attention::AuxKind::Top | crate::attention::AuxKind::TopAttn)) {
        data.pool_barcodes(&spec, 256)?
    } else {
        Vec::new()
    };
    let mut model = Model::init(spec, &pool, &mut rng)?;
    let report = train_model(&mut model, data, cfg, &mut rng)?;
    Ok((model, report))
}

/// Runs the iteration budget, recording the loss of every iteration.
pub fn train_model<R: Rng>(model: &mut Model, data: &TrainData, cfg: &TrainConfig, rng: &mut R) -> Result<TrainReport, TrainError> {
    let schedule = Schedule { total: cfg.iterations, base: cfg.rates };
    let mut adam = Adam::new(&model.params);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (x, y, codes) = data.batch(model, cfg.batch_size, rng)?;
        let g = Graph::new();
        let p = model.params.bind(&g);
        let yhat = model.forward(&p, g.constant(x), &codes)?;
        let loss = cfg.loss.on_graph(yhat, g.constant(y))?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(TrainError::DivergenceDetected { iteration: it, loss: value });
        }
        let grads = p.gradients(&g.backward(loss)?);
        drop(p);
        drop(g);
        adam.step(&mut model.params, &grads, |group| schedule.lr(it, group));
        if model.params.params().iter().any(|p| !p.value.all_finite()) {
            return Err(TrainError::DivergenceDetected { iteration: it, loss: f64::NAN });
        }
        losses.push(value);
    }
    Ok(TrainReport { losses })
}

/// One-step forecasts for every index of `region`, each from the true
/// preceding `T` observations. Returns the first forecast step per index.
pub fn rolling_forecast(model: &Model, scaler: &Scaler, series: &[f64], region: Range<usize>) -> Result<Vec<f64>, TrainError> {
    let t = model.spec.lookback;
    if region.start < t {
        return Err(TrainError::InsufficientHistory { start: region.start, t });
    }
    if region.end > series.len() {
        return Err(TrainError::SeriesTooShort { len: series.len(), t, h: region.end - series.len() });
    }
    if region.is_empty() {
        return Ok(Vec::new());
    }
    let mut params = Vec::with_capacity(region.len());
    let mut xs = Vec::with_capacity(region.len() * t);
    for i in region.clone() {
        let window = &series[i - t..i];
        let p = scaler.window_params(window);
        xs.extend(Scaler::apply(window, p));
        params.push(p);
    }
    let x = Tensor::new(vec![region.len(), t], xs)?;
    let y = model.predict(&x)?;
    Ok(params.iter().enumerate().map(|(r, p)| Scaler::invert(&[y.at(r, 0)], *p)[0]).collect())
}

/// Multi-step forecast of the `H` values following `history`.
pub fn forecast_next(model: &Model, scaler: &Scaler, history: &[f64]) -> Result<Vec<f64>, TrainError> {
    let t = model.spec.lookback;
    if history.len() < t {
        return Err(TrainError::InsufficientHistory { start: history.len(), t });
    }
    let window = &history[history.len() - t..];
    let p = scaler.window_params(window);
    let x = Tensor::new(vec![1, t], Scaler::apply(window, p))?;
    Ok(Scaler::invert(model.predict(&x)?.row(0), p))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Element-wise median of equally long member forecasts.
pub fn ensemble_forecast(members: &[Vec<f64>]) -> Result<Vec<f64>, TrainError> {
    let first = members.first().ok_or(TrainError::EmptyEnsemble)?;
    for (index, m) in members.iter().enumerate() {
        if m.len() != first.len() {
            return Err(TrainError::LengthMismatch { index, expected: first.len(), got: m.len() });
        }
    }
    Ok((0..first.len())
        .map(|k| {
            let mut col: Vec<f64> = members.iter().map(|m| m[k]).collect();
            median(&mut col)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheckOptions};
    use crate::models::{Backbone, BackboneKind, Variant};

    #[test]
    fn losses() {
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_smape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((loss_smape(&[50.0], &[100.0]).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        let g = Graph::new();
        let l = Loss::Smape.on_graph(g.constant(Tensor::vector(vec![50.0, 0.0])), g.constant(Tensor::vector(vec![100.0, 0.0]))).unwrap();
        assert!((l.item() - 100.0 / 3.0).abs() < 1e-12);
        let yhat = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let y = Tensor::vector(vec![0.5, 0.7, 1.1]);
        for loss in [Loss::Mse, Loss::Smape] {
            let r = check_gradients(&[yhat.clone(), y.clone()], GradCheckOptions::default(), |_, v| loss.on_graph(v[0], v[1])).unwrap();
            assert!(r.max_rel_error < 1e-6, "{loss:?}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = Schedule { total: 100, base: GroupRates::default() };
        assert_eq!(s.lr(0, ParamGroup::TopVec), 9e-2);
        assert_eq!(s.lr(100, ParamGroup::Encoder), 0.0);
        assert_eq!(s.factor(100), 0.0);
        let lrs: Vec<f64> = (0..=100).map(|t| s.lr(t, ParamGroup::Mlp)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let mut ps = ParamSet::new();
        ps.add("a", ParamGroup::Mlp, Tensor::vector(vec![1.0, -2.0]));
        let before = ps.clone();
        let mut adam = Adam::new(&ps);
        adam.step(&mut ps, &[Tensor::zeros(&[2])], |_| 0.1);
        assert_eq!(ps, before);
        let mut fresh = Adam::new(&ps);
        fresh.step(&mut ps, &[Tensor::vector(vec![1.0, -1.0])], |_| 0.1);
        // the first bias-corrected step moves each coordinate by about lr
        assert!((ps.params()[0].value.data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn sampled_batches_stay_in_bounds() {
        let series: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (starts, x, y) = sample_batch(&series[..7], 5, 2, 3, &mut rng).unwrap();
        assert_eq!(starts, vec![0, 0, 0]);
        assert_eq!(x.row(2), &series[..5]);
        assert_eq!(y.row(1), &series[5..7]);
        for _ in 0..10_000 {
            let (starts, x, y) = sample_batch(&series, 8, 3, 1, &mut rng).unwrap();
            assert!(starts[0] + 11 <= 50);
            assert_eq!(x.row(0)[0], starts[0] as f64);
            assert_eq!(y.row(0)[2], (starts[0] + 10) as f64);
        }
        assert!(matches!(sample_batch(&series[..5], 5, 1, 1, &mut rng), Err(TrainError::SeriesTooShort { .. })));
    }

    #[test]
    fn ensemble_median() {
        let m = vec![vec![1.0, 3.0], vec![2.0, 4.0], vec![9.0, 0.0]];
        assert_eq!(ensemble_forecast(&m).unwrap(), vec![2.0, 3.0]);
        assert_eq!(ensemble_forecast(&m[..1]).unwrap(), m[0]);
        assert_eq!(ensemble_forecast(&m[..2]).unwrap(), vec![1.5, 3.5]);
        let permuted = vec![m[2].clone(), m[0].clone(), m[1].clone()];
        assert_eq!(ensemble_forecast(&permuted).unwrap(), vec![2.0, 3.0]);
        assert_eq!(ensemble_forecast(&[]), Err(TrainError::EmptyEnsemble));
    }

    fn linear_spec(t: usize) -> ModelSpec {
        ModelSpec { backbone: BackboneKind::Linear, variant: Variant::Base, lookback: t, horizon: 1, ..ModelSpec::default() }
    }

    #[test]
    fn linear_model_learns_a_line() {
        let series: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let spec = linear_spec(4);
        let data = TrainData::new(vec![series[..150].to_vec()], Normalization::Global, &spec).unwrap();
        let cfg = TrainConfig {
            iterations: 3000,
            batch_size: 16,
            rates: GroupRates { backbone: 5e-2, ..GroupRates::default() },
            ..TrainConfig::default()
        };
        let (model, report) = fit(spec, &data, &cfg, 7).unwrap();
        assert_eq!(report.losses.len(), 3000);
        let preds = rolling_forecast(&model, &data.scalers[0], &series, 150..160).unwrap();
        let mse = loss_mse(&preds, &series[150..160]).unwrap();
        assert!(mse < 1e-6, "validation mse {mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let series: Vec<f64> = (0..120).map(|i| (i as f64 * 0.5).sin() + 2.0).collect();
        let spec = ModelSpec { lookback: 10, window_len: Some(6), coord_functions: 2, mlp_hidden: 4, ..linear_spec(10) };
        let spec = ModelSpec { variant: Variant::TopAttn, ..spec };
        let data = TrainData::new(vec![series], Normalization::Global, &spec).unwrap();
        let cfg = TrainConfig { iterations: 30, batch_size: 8, ..TrainConfig::default() };
        let (a, ra) = fit(spec, &data, &cfg, 3).unwrap();
        let (b, rb) = fit(spec, &data, &cfg, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra.losses, rb.losses);
        let (c, _) = fit(spec, &data, &cfg, 4).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn divergence_is_reported() {
        let series: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let spec = linear_spec(5);
        let data = TrainData::new(vec![series], Normalization::None, &spec).unwrap();
        let cfg = TrainConfig { iterations: 5, batch_size: 4, ..TrainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::init(spec, &[], &mut rng).unwrap();
        let Backbone::Linear { b, .. } = model.backbone.clone() else { unreachable!() };
        *model.params.get_mut(b) = Tensor::vector(vec![f64::INFINITY]);
        let err = train_model(&mut model, &data, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, TrainError::DivergenceDetected { iteration: 0, .. }));
    }

    #[test]
    fn rolling_forecast_matches_manual_loop() {
        let series: Vec<f64> = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0];
        let spec = linear_spec(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::init(spec, &[], &mut rng).unwrap();
        let scaler = Scaler::Affine { shift: 2.0, scale: 4.0 };
        let out = rolling_forecast(&model, &scaler, &series, 5..10).unwrap();
        assert_eq!(out.len(), 5);
        for (k, i) in (5..10).enumerate() {
            let p = scaler.window_params(&series[i - 3..i]);
            let z = Scaler::apply(&series[i - 3..i], p);
            let manual = Scaler::invert(&model.linear_forecast(&z, None).unwrap(), p)[0];
            assert!((out[k] - manual).abs() < 1e-12);
        }
        assert!(matches!(rolling_forecast(&model, &scaler, &series, 2..5), Err(TrainError::InsufficientHistory { .. })));

        // naive-equivalent weights on a constant series
        let mut naive = model.clone();
        let Backbone::Linear { w, b } = naive.backbone.clone() else { unreachable!() };
        *naive.params.get_mut(w) = Tensor::new(vec![3, 1], vec![0.0, 0.0, 1.0]).unwrap();
        *naive.params.get_mut(b) = Tensor::vector(vec![0.0]);
        let flat = vec![4.0; 10];
        assert_eq!(rolling_forecast(&naive, &Scaler::identity(), &flat, 3..10).unwrap(), vec![4.0; 7]);
    }
}
