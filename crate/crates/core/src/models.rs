//! Forecasting backbones and their wiring with an auxiliary-signal head.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{affine, AuxHead, AuxKind, AuxShape};
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamSet};
use crate::persistence::Barcode;
use crate::vectorize::{kmeanspp_init, VectorizeError};
use crate::windowing::{default_window_len, windowed_barcodes, WindowError, WindowPlan, WindowedBarcodes};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Window(#[from] WindowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Linear,
    Nbeats,
}

/// Ablation variant: which auxiliary signal is concatenated to the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Top,
    Attn,
    TopAttn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Top, Variant::Attn, Variant::TopAttn];

    pub fn aux_kind(self) -> Option<AuxKind> {
        match self {
            Variant::Base => None,
            Variant::Top => Some(AuxKind::Top),
            Variant::Attn => Some(AuxKind::Attn),
            Variant::TopAttn => Some(AuxKind::TopAttn),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Top => "+Top",
            Variant::Attn => "+Attn",
            Variant::TopAttn => "+TopAttn",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub backbone: BackboneKind,
    pub variant: Variant,
    pub lookback: usize,
    pub horizon: usize,
    /// Sub-window length `n`; `floor(0.7 T)` when absent.
    pub window_len: Option<usize>,
    pub coord_functions: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub mlp_hidden: usize,
    pub blocks: usize,
    pub block_hidden: usize,
    pub block_layers: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Linear,
            variant: Variant::TopAttn,
            lookback: 12,
            horizon: 1,
            window_len: None,
            coord_functions: 4,
            heads: 2,
            encoder_layers: 1,
            mlp_hidden: 16,
            blocks: 2,
            block_hidden: 32,
            block_layers: 4,
        }
    }
}

impl ModelSpec {
    pub fn window_len(&self) -> usize {
        self.window_len.unwrap_or_else(|| default_window_len(self.lookback))
    }

    pub fn plan(&self) -> Result<WindowPlan, ModelError> {
        Ok(WindowPlan::new(self.lookback, self.window_len())?)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.lookback == 0 || self.horizon == 0 {
            return bad(format!("lookback {} and horizon {} must be positive", self.lookback, self.horizon));
        }
        if self.backbone == BackboneKind::Nbeats && (self.blocks == 0 || self.block_hidden == 0 || self.block_layers == 0) {
            return bad("N-BEATS needs at least one block, layer and hidden unit".into());
        }
        if let Some(kind) = self.variant.aux_kind() {
            self.plan()?;
            if self.mlp_hidden == 0 {
                return bad("mlp_hidden must be positive".into());
            }
            if kind != AuxKind::Attn && self.coord_functions == 0 {
                return bad("coord_functions must be positive".into());
            }
            if kind != AuxKind::Top && self.encoder_layers > 0 {
                if self.heads == 0 {
                    return bad("heads must be positive".into());
                }
                let width = 2 * self.coord_functions;
                if kind == AuxKind::TopAttn && !width.is_multiple_of(self.heads) {
                    return bad(format!("{} heads do not divide encoder width {width}", self.heads));
                }
            }
        }
        Ok(())
    }

    fn aux_shape(&self) -> Result<AuxShape, ModelError> {
        Ok(AuxShape {
            plan: self.plan()?,
            coord_functions: self.coord_functions,
            heads: self.heads,
            layers: self.encoder_layers,
            mlp_hidden: self.mlp_hidden,
        })
    }

    /// Backbone input width: `T`, or `2T` with an auxiliary signal.
    pub fn input_width(&self) -> usize {
        if self.variant == Variant::Base {
            self.lookback
        } else {
            2 * self.lookback
        }
    }

    /// Closed-form scalar parameter count.
    pub fn scalar_count(&self) -> Result<usize, ModelError> {
        self.validate()?;
        let aux = match self.variant.aux_kind() {
            Some(kind) => AuxHead::scalar_count(kind, &self.aux_shape()?),
            None => 0,
        };
        let (tp, h) = (self.input_width(), self.horizon);
        let backbone = match self.backbone {
            BackboneKind::Linear => tp * h + h,
            BackboneKind::Nbeats => {
                let k = self.block_hidden;
                let stack = (tp * k + k) + (self.block_layers - 1) * (k * k + k);
                self.blocks * (stack + (k * tp + tp) + (k * h + h))
            }
        };
        Ok(aux + backbone)
    }
}

/// One generic block: `block_layers` affine+ReLU layers, then a backcast
/// head to the block input width and a forecast head to `H`.
#[derive(Debug, Clone)]
pub struct NBeatsBlock {
    pub layers: Vec<(ParamId, ParamId)>,
    pub backcast: (ParamId, ParamId),
    pub forecast: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Linear { w: ParamId, b: ParamId },
    NBeats { blocks: Vec<NBeatsBlock> },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub aux: Option<AuxHead>,
    pub backbone: Backbone,
    pub params: ParamSet,
}

impl Model {
    /// Randomly initialized model. Coordinate-function banks are seeded by
    /// k-means++ over the pooled bars of `train_barcodes`.
    pub fn init<R: Rng>(spec: ModelSpec, train_barcodes: &[WindowedBarcodes], rng: &mut R) -> Result<Self, ModelError> {
        spec.validate()?;
        let banks = match spec.variant.aux_kind() {
            Some(AuxKind::Top | AuxKind::TopAttn) => {
                let e = spec.coord_functions;
                let sub = kmeanspp_init(train_barcodes.iter().flat_map(|w| &w.sub), e, rng)?;
                let sup = kmeanspp_init(train_barcodes.iter().flat_map(|w| &w.sup), e, rng)?;
                Some((sub, sup))
            }
            _ => None,
        };
        Self::build(spec, banks.as_ref().map(|(a, b)| (a, b)), rng)
    }

    /// Model with the right structure and placeholder values, to be filled
    /// from stored tensors.
    pub fn skeleton(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Self::build(spec, None, &mut rng)
    }

    fn build<R: Rng>(
        spec: ModelSpec,
        banks: Option<(&crate::vectorize::CoordinateFunctionBank, &crate::vectorize::CoordinateFunctionBank)>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut params = ParamSet::new();
        let aux = match spec.variant.aux_kind() {
            Some(kind) => Some(AuxHead::init(&mut params, kind, spec.aux_shape()?, banks, rng)?),
            None => None,
        };
        let (tp, h) = (spec.input_width(), spec.horizon);
        let g = ParamGroup::Backbone;
        let backbone = match spec.backbone {
            BackboneKind::Linear => Backbone::Linear {
                w: params.xavier("linear.w", g, tp, h, rng),
                b: params.zeros("linear.b", g, &[h]),
            },
            BackboneKind::Nbeats => {
                let k = spec.block_hidden;
                let blocks = (0..spec.blocks)
                    .map(|l| {
                        let layers = (0..spec.block_layers)
                            .map(|i| {
                                let fan_in = if i == 0 { tp } else { k };
                                (
                                    params.xavier(format!("block{l}.fc{i}.w"), g, fan_in, k, rng),
                                    params.zeros(format!("block{l}.fc{i}.b"), g, &[k]),
                                )
                            })
                            .collect();
                        NBeatsBlock {
                            layers,
                            backcast: (params.xavier(format!("block{l}.backcast.w"), g, k, tp, rng), params.zeros(format!("block{l}.backcast.b"), g, &[tp])),
                            forecast: (params.xavier(format!("block{l}.forecast.w"), g, k, h, rng), params.zeros(format!("block{l}.forecast.b"), g, &[h])),
                        }
                    })
                    .collect();
                Backbone::NBeats { blocks }
            }
        };
        Ok(Self { spec, aux, backbone, params })
    }

    pub fn needs_barcodes(&self) -> bool {
        self.aux.as_ref().is_some_and(AuxHead::needs_barcodes)
    }

    /// Windowed barcodes of each input row, or nothing when the model does
    /// not use them.
    pub fn barcodes(&self, x: &Tensor) -> Result<Vec<WindowedBarcodes>, ModelError> {
        if !self.needs_barcodes() {
            return Ok(Vec::new());
        }
        let plan = self.spec.plan()?;
        let (rows, _) = x.dims2().ok_or_else(|| ModelError::Shape(format!("input shape {:?}", x.shape())))?;
        (0..rows).map(|r| Ok(windowed_barcodes(x.row(r), &plan)?)).collect()
    }

    /// Forecast `B × H` for inputs `x` (`B × T`).
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, barcodes: &[WindowedBarcodes]) -> Result<Var<'g>, ModelError> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.spec.lookback {
            return Err(ModelError::Shape(format!("input {shape:?}, lookback {}", self.spec.lookback)));
        }
        let v = match &self.aux {
            Some(head) => Some(head.forward(p, x, barcodes)?),
            None => None,
        };
        let with_aux = |part: Var<'g>| -> Result<Var<'g>, ModelError> {
            Ok(match v {
                Some(v) => Var::concat(&[part, v], 1)?,
                None => part,
            })
        };
        match &self.backbone {
            Backbone::Linear { w, b } => affine(with_aux(x)?, p.get(*w), p.get(*b)),
            Backbone::NBeats { blocks } => {
                let t = self.spec.lookback;
                let mut residual = x;
                let mut forecast: Option<Var<'g>> = None;
                for block in blocks {
                    let mut h = with_aux(residual)?;
                    for &(w, b) in &block.layers {
                        h = affine(h, p.get(w), p.get(b))?.relu()?;
                    }
                    let back = affine(h, p.get(block.backcast.0), p.get(block.backcast.1))?;
                    let y = affine(h, p.get(block.forecast.0), p.get(block.forecast.1))?;
                    residual = residual.sub(back.slice(1, 0, t)?)?;
                    forecast = Some(match forecast {
                        Some(acc) => acc.add(y)?,
                        None => y,
                    });
                }
                Ok(forecast.expect("at least one block"))
            }
        }
    }

    /// Inference on a batch of lookback windows.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let barcodes = self.barcodes(x)?;
        self.predict_with(x, &barcodes)
    }

    pub fn predict_with(&self, x: &Tensor, barcodes: &[WindowedBarcodes]) -> Result<Tensor, ModelError> {
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let out = self.forward(&p, g.constant(x.clone()), barcodes)?;
        let value = out.value().clone();
        Ok(value)
    }

    /// Linear forecast `wᵀ (x, v) + b` for one lookback window and a given
    /// auxiliary signal, bypassing the head.
    pub fn linear_forecast(&self, x: &[f64], v: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
        let Backbone::Linear { w, b } = &self.backbone else {
            return Err(ModelError::InvalidConfig("not a linear model".into()));
        };
        let mut input = x.to_vec();
        if let Some(v) = v {
            input.extend_from_slice(v);
        }
        let (w, b) = (self.params.get(*w), self.params.get(*b));
        if input.len() != w.shape()[0] {
            return Err(ModelError::Shape(format!("input width {}, weights {:?}", input.len(), w.shape())));
        }
        Ok((0..w.shape()[1]).map(|c| input.iter().enumerate().map(|(r, xi)| xi * w.at(r, c)).sum::<f64>() + b.data()[c]).collect())
    }
}

/// Builds the chosen variant on the chosen backbone.
pub fn make_variant<R: Rng>(
    spec: ModelSpec,
    train_barcodes: &[WindowedBarcodes],
    rng: &mut R,
) -> Result<Model, ModelError> {
    Model::init(spec, train_barcodes, rng)
}

/// Pools of all sublevel and superlevel bars, e.g. for bank initialization.
pub fn pooled(barcodes: &[WindowedBarcodes]) -> (Vec<&Barcode>, Vec<&Barcode>) {
    (barcodes.iter().flat_map(|w| &w.sub).collect(), barcodes.iter().flat_map(|w| &w.sup).collect())
}
