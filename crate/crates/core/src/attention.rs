//! Transformer encoder over per-window features and the auxiliary-signal
//! heads built on it.
//!
//! All forward passes work on a batch stacked along rows: `B` samples of `W`
//! rows each form a `(B·W) × d` matrix, and attention is restricted to the
//! `W`-row block of each sample.

use rand::Rng;

use crate::autodiff::{Tensor, Var};
use crate::models::ModelError;
use crate::params::{Bound, ParamGroup, ParamId, ParamSet};
use crate::persistence::Barcode;
use crate::vectorize::{vectorize_var, CoordinateFunction, CoordinateFunctionBank};
use crate::windowing::{WindowPlan, WindowedBarcodes};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const FFN_EXPANSION: usize = 4;

/// Sinusoidal table `P[j, 2i] = sin(j / 10000^(2i/d))`,
/// `P[j, 2i+1] = cos(j / 10000^(2i/d))`.
pub fn positional_table(rows: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * d);
    for j in 0..rows {
        for c in 0..d {
            let i2 = (c - c % 2) as f64;
            let angle = j as f64 / 10000f64.powf(i2 / d as f64);
            data.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![rows, d], data).expect("rows × d")
}

/// Adds the positional table to every `block`-row sample of `a`.
pub fn positional_encode<'g>(a: Var<'g>, block: usize) -> Result<Var<'g>, ModelError> {
    let shape = a.shape();
    let (rows, d) = (shape[0], shape[1]);
    if block == 0 || rows % block != 0 {
        return Err(ModelError::Shape(format!("{rows} rows do not split into blocks of {block}")));
    }
    let table = positional_table(block, d);
    let tiled: Vec<f64> = (0..rows / block).flat_map(|_| table.data().iter().copied()).collect();
    let p = a.graph().constant(Tensor::new(vec![rows, d], tiled)?);
    Ok(a.add(p)?)
}

/// `softmax((A Wq)(A Wk)ᵀ / sqrt(d_k)) A Wv`, per `block`-row sample.
pub fn scaled_dot_attention<'g>(
    a: Var<'g>,
    wq: Var<'g>,
    wk: Var<'g>,
    wv: Var<'g>,
    block: usize,
) -> Result<Var<'g>, ModelError> {
    Ok(Var::block_attention(a.matmul(wq)?, a.matmul(wk)?, a.matmul(wv)?, block)?)
}

/// Attention probabilities `W × W` of a single sample.
pub fn attention_weights(a: &Tensor, wq: &Tensor, wk: &Tensor) -> Result<Tensor, ModelError> {
    use crate::autodiff::{matmul_forward, softmax_forward};
    let q = matmul_forward(a, wq)?;
    let k = matmul_forward(a, wk)?;
    let kt = {
        let (r, c) = k.dims2().expect("matrix");
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = k.at(i, j);
            }
        }
        Tensor::new(vec![c, r], data)?
    };
    let scale = 1.0 / (wk.shape()[1] as f64).sqrt();
    Ok(softmax_forward(&matmul_forward(&q, &kt)?.map(|s| s * scale), 1)?)
}

/// `x W + b` with `b` broadcast over rows.
pub fn affine<'g>(x: Var<'g>, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>, ModelError> {
    Ok(x.matmul(w)?.add(b)?)
}

/// Post-norm encoder layer of width `d` with `heads` heads of size `d / heads`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub width: usize,
    pub heads: usize,
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    wo: ParamId,
    bo: ParamId,
    norm1: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
}

impl EncoderLayer {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(ModelError::InvalidConfig(format!(
                "{heads} heads do not divide encoder width {width}"
            )));
        }
        let dh = width / heads;
        let g = ParamGroup::Encoder;
        let per_head = |tag: &str, ps: &mut ParamSet, rng: &mut R| -> Vec<ParamId> {
            (0..heads).map(|h| ps.xavier(format!("{prefix}.{tag}{h}"), g, width, dh, rng)).collect()
        };
        let wq = per_head("wq", ps, rng);
        let wk = per_head("wk", ps, rng);
        let wv = per_head("wv", ps, rng);
        let wo = ps.xavier(format!("{prefix}.wo"), g, heads * dh, width, rng);
        let bo = ps.zeros(format!("{prefix}.bo"), g, &[width]);
        let norm1 = (ps.ones(format!("{prefix}.norm1.gamma"), g, &[width]), ps.zeros(format!("{prefix}.norm1.beta"), g, &[width]));
        let inner = FFN_EXPANSION * width;
        let ff1 = (ps.xavier(format!("{prefix}.ff1.w"), g, width, inner, rng), ps.zeros(format!("{prefix}.ff1.b"), g, &[inner]));
        let ff2 = (ps.xavier(format!("{prefix}.ff2.w"), g, inner, width, rng), ps.zeros(format!("{prefix}.ff2.b"), g, &[width]));
        let norm2 = (ps.ones(format!("{prefix}.norm2.gamma"), g, &[width]), ps.zeros(format!("{prefix}.norm2.beta"), g, &[width]));
        Ok(Self { width, heads, wq, wk, wv, wo, bo, norm1, ff1, ff2, norm2 })
    }

    /// Scalar parameter count of one layer of width `d`; independent of the
    /// head count.
    pub fn scalar_count(d: usize) -> usize {
        let inner = FFN_EXPANSION * d;
        3 * d * d + (d * d + d) + 2 * d + (d * inner + inner) + (inner * d + d) + 2 * d
    }

    pub fn head_weights<'a>(&self, ps: &'a ParamSet, head: usize) -> (&'a Tensor, &'a Tensor, &'a Tensor) {
        (ps.get(self.wq[head]), ps.get(self.wk[head]), ps.get(self.wv[head]))
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, a: Var<'g>, block: usize) -> Result<Var<'g>, ModelError> {
        let heads = (0..self.heads)
            .map(|h| scaled_dot_attention(a, p.get(self.wq[h]), p.get(self.wk[h]), p.get(self.wv[h]), block))
            .collect::<Result<Vec<_>, _>>()?;
        let mixed = affine(Var::concat(&heads, 1)?, p.get(self.wo), p.get(self.bo))?;
        let b = norm(a.add(mixed)?, p, self.norm1)?;
        let ff = affine(b, p.get(self.ff1.0), p.get(self.ff1.1))?.relu()?;
        let ff = affine(ff, p.get(self.ff2.0), p.get(self.ff2.1))?;
        norm(b.add(ff)?, p, self.norm2)
    }
}

fn norm<'g>(x: Var<'g>, p: &Bound<'g>, (gamma, beta): (ParamId, ParamId)) -> Result<Var<'g>, ModelError> {
    Ok(x.layer_norm(1, LAYER_NORM_EPS)?.mul(p.get(gamma))?.add(p.get(beta))?)
}

/// Two affine layers with a ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
}

impl Mlp {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::Mlp;
        let l1 = (ps.xavier(format!("{prefix}.l1.w"), g, input, hidden, rng), ps.zeros(format!("{prefix}.l1.b"), g, &[hidden]));
        let l2 = (ps.xavier(format!("{prefix}.l2.w"), g, hidden, output, rng), ps.zeros(format!("{prefix}.l2.b"), g, &[output]));
        Self { input, hidden, output, l1, l2 }
    }

    pub fn scalar_count(input: usize, hidden: usize, output: usize) -> usize {
        input * hidden + hidden + hidden * output + output
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>, ModelError> {
        let h = affine(x, p.get(self.l1.0), p.get(self.l1.1))?.relu()?;
        affine(h, p.get(self.l2.0), p.get(self.l2.1))
    }
}

/// Which auxiliary signal a head produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    /// Vectorized barcodes straight into the MLP.
    Top,
    /// Raw window rows through the encoder.
    Attn,
    /// Vectorized barcodes through the encoder.
    TopAttn,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxShape {
    pub plan: WindowPlan,
    pub coord_functions: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
}

#[derive(Debug, Clone)]
struct Banks {
    sub: (ParamId, ParamId),
    sup: (ParamId, ParamId),
}

/// Maps a lookback window to an auxiliary signal of the same length `T`.
#[derive(Debug, Clone)]
pub struct AuxHead {
    pub kind: AuxKind,
    pub plan: WindowPlan,
    /// Encoder input width: `2e`, or `n` for raw windows.
    pub width: usize,
    banks: Option<Banks>,
    layers: Vec<EncoderLayer>,
    mlp: Mlp,
}

/// Largest divisor of `width` not exceeding `heads`.
pub fn fit_heads(width: usize, heads: usize) -> usize {
    (1..=heads.min(width).max(1)).rev().find(|h| width.is_multiple_of(*h)).unwrap_or(1)
}

impl AuxHead {
    /// Builds the head. `banks` gives the initial sublevel and superlevel
    /// coordinate functions; without them the banks are placeholders (zero
    /// centers, unit radii) meant to be overwritten, e.g. from a checkpoint.
    /// Ignored for [`AuxKind::Attn`].
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        kind: AuxKind,
        shape: AuxShape,
        banks: Option<(&CoordinateFunctionBank, &CoordinateFunctionBank)>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let e = shape.coord_functions;
        let (width, banks) = match kind {
            AuxKind::Attn => (shape.plan.n, None),
            AuxKind::Top | AuxKind::TopAttn => {
                let placeholder = CoordinateFunctionBank::new(vec![CoordinateFunction { center: (0.0, 0.0), radius: 1.0 }; e])?;
                let (sub, sup) = banks.unwrap_or((&placeholder, &placeholder));
                if sub.len() != e || sup.len() != e {
                    return Err(ModelError::InvalidConfig(format!(
                        "banks of sizes {} and {} for {e} coordinate functions",
                        sub.len(),
                        sup.len()
                    )));
                }
                let g = ParamGroup::TopVec;
                let banks = Banks {
                    sub: (ps.add("topvec.sub.centers", g, sub.centers()), ps.add("topvec.sub.radii", g, sub.radii())),
                    sup: (ps.add("topvec.sup.centers", g, sup.centers()), ps.add("topvec.sup.radii", g, sup.radii())),
                };
                (2 * e, Some(banks))
            }
        };
        let layer_count = if kind == AuxKind::Top { 0 } else { shape.layers };
        let heads = match kind {
            AuxKind::Attn => fit_heads(width, shape.heads),
            _ => shape.heads,
        };
        let layers = (0..layer_count)
            .map(|l| EncoderLayer::init(ps, &format!("encoder.{l}"), width, heads, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let mlp = Mlp::init(ps, "mlp", shape.plan.windows * width, shape.mlp_hidden, shape.plan.t, rng);
        Ok(Self { kind, plan: shape.plan, width, banks, layers, mlp })
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn needs_barcodes(&self) -> bool {
        self.banks.is_some()
    }

    /// Closed-form scalar parameter count.
    pub fn scalar_count(kind: AuxKind, shape: &AuxShape) -> usize {
        let e = shape.coord_functions;
        let (width, topvec) = match kind {
            AuxKind::Attn => (shape.plan.n, 0),
            _ => (2 * e, 6 * e),
        };
        let layers = if kind == AuxKind::Top { 0 } else { shape.layers };
        topvec
            + layers * EncoderLayer::scalar_count(width)
            + Mlp::scalar_count(shape.plan.windows * width, shape.mlp_hidden, shape.plan.t)
    }

    /// Encoder input rows `(B·W) × width` before positional encoding.
    pub fn features<'g>(
        &self,
        p: &Bound<'g>,
        x: Var<'g>,
        barcodes: &[WindowedBarcodes],
    ) -> Result<Var<'g>, ModelError> {
        let batch = x.shape()[0];
        let w = self.plan.windows;
        match &self.banks {
            None => {
                let n = self.plan.n;
                let xv = x.value();
                let mut rows = Vec::with_capacity(batch * w * n);
                for b in 0..batch {
                    let row = xv.row(b);
                    for j in 0..w {
                        rows.extend_from_slice(self.plan.window(row, j));
                    }
                }
                drop(xv);
                Ok(x.graph().constant(Tensor::new(vec![batch * w, n], rows)?))
            }
            Some(banks) => {
                if barcodes.len() != batch || barcodes.iter().any(|wb| wb.windows() != w) {
                    return Err(ModelError::Shape(format!(
                        "expected {batch} barcode sets of {w} windows, got {}",
                        barcodes.len()
                    )));
                }
                let sub: Vec<&Barcode> = barcodes.iter().flat_map(|wb| &wb.sub).collect();
                let sup: Vec<&Barcode> = barcodes.iter().flat_map(|wb| &wb.sup).collect();
                let vs = vectorize_var(&sub, p.get(banks.sub.0), p.get(banks.sub.1))?;
                let vp = vectorize_var(&sup, p.get(banks.sup.0), p.get(banks.sup.1))?;
                Ok(Var::concat(&[vs, vp], 1)?)
            }
        }
    }

    /// Signal `B × T` for inputs `x` (`B × T`) and their windowed barcodes
    /// (unused for raw-window heads).
    pub fn forward<'g>(
        &self,
        p: &Bound<'g>,
        x: Var<'g>,
        barcodes: &[WindowedBarcodes],
    ) -> Result<Var<'g>, ModelError> {
        let batch = x.shape()[0];
        let w = self.plan.windows;
        let mut a = self.features(p, x, barcodes)?;
        if !self.layers.is_empty() {
            a = positional_encode(a, w)?;
            for layer in &self.layers {
                a = layer.forward(p, a, w)?;
            }
        }
        self.mlp.forward(p, a.reshape(&[batch, w * self.width])?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Graph;
    use crate::gradcheck::{check_gradients, GradCheckOptions};
    use crate::windowing::{plan, windowed_barcodes};

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn positional_table_values() {
        let p = positional_table(3, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(p.at(1, 0), 1f64.sin());
        assert_eq!(p.at(1, 3), (1.0 / 100.0f64).cos());
        let g = Graph::new();
        let out = positional_encode(g.constant(Tensor::zeros(&[6, 4])), 3).unwrap();
        assert_eq!(out.value().row(4), p.row(1));
    }

    #[test]
    fn single_key_attention_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, wq, wk, wv) = (random(&mut rng, &[1, 4]), random(&mut rng, &[4, 2]), random(&mut rng, &[4, 2]), random(&mut rng, &[4, 2]));
        let g = Graph::new();
        let out = scaled_dot_attention(g.constant(a.clone()), g.constant(wq), g.constant(wk), g.constant(wv.clone()), 1).unwrap();
        let expected = crate::autodiff::matmul_forward(&a, &wv).unwrap();
        for (x, y) in out.value().data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_query_weights_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, wk, wv) = (random(&mut rng, &[5, 4]), random(&mut rng, &[4, 2]), random(&mut rng, &[4, 2]));
        let wq = Tensor::zeros(&[4, 2]);
        let probs = attention_weights(&a, &wq, &wk).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let g = Graph::new();
        let out = scaled_dot_attention(g.constant(a.clone()), g.constant(wq), g.constant(wk), g.constant(wv.clone()), 5).unwrap();
        let av = crate::autodiff::matmul_forward(&a, &wv).unwrap();
        for c in 0..2 {
            let mean = (0..5).map(|r| av.at(r, c)).sum::<f64>() / 5.0;
            for r in 0..5 {
                assert!((out.value().at(r, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(&mut rng, &[6, 4]).map(|x| 5.0 * x);
            let probs = attention_weights(&a, &random(&mut rng, &[4, 2]), &random(&mut rng, &[4, 2])).unwrap();
            for r in 0..6 {
                assert!(probs.row(r).iter().all(|&p| p >= 0.0));
                assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, wq, wk, wv) = (random(&mut rng, &[5, 4]), random(&mut rng, &[4, 2]), random(&mut rng, &[4, 2]), random(&mut rng, &[4, 2]));
        let perm = [3, 0, 4, 1, 2];
        let permuted = Tensor::from_rows(&perm.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let g = Graph::new();
        let run = |x: &Tensor| scaled_dot_attention(g.constant(x.clone()), g.constant(wq.clone()), g.constant(wk.clone()), g.constant(wv.clone()), 5).unwrap().value().clone();
        let (out, out_p) = (run(&a), run(&permuted));
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((out_p.at(k, c) - out.at(i, c)).abs() < 1e-12);
            }
        }
        // duplicated rows attend identically
        let dup = Tensor::from_rows(&[a.row(0).to_vec(), a.row(1).to_vec(), a.row(0).to_vec()]).unwrap();
        let g2 = Graph::new();
        let o = scaled_dot_attention(g2.constant(dup), g2.constant(wq.clone()), g2.constant(wk.clone()), g2.constant(wv.clone()), 3).unwrap();
        assert_eq!(o.value().row(0), o.value().row(2));
    }

    #[test]
    fn encoder_layer_shape_finiteness_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let layer = EncoderLayer::init(&mut ps, "enc", 4, 2, &mut rng).unwrap();
        assert_eq!(ps.scalar_count(), EncoderLayer::scalar_count(4));
        assert!(EncoderLayer::init(&mut ParamSet::new(), "bad", 6, 4, &mut rng).is_err());
        let a = random(&mut rng, &[6, 4]);
        let g = Graph::new();
        let out = layer.forward(&ps.bind(&g), g.constant(a.clone()), 3).unwrap();
        assert_eq!(out.shape(), vec![6, 4]);
        assert!(out.value().all_finite());

        // perturb the affine parts away from their neutral init
        for p in ps.params_mut() {
            p.value = p.value.map(|x| x + 0.1 * (x * 37.0).sin() + 0.05);
        }
        let values: Vec<Tensor> = ps.params().iter().map(|p| p.value.clone()).collect();
        let target = random(&mut rng, &[6, 4]);
        let mut inputs = values.clone();
        inputs.push(a);
        inputs.push(target);
        let k = values.len();
        let report = check_gradients(&inputs, GradCheckOptions::default(), |_, v| {
            let bound = Bound::from_vars(v[..k].to_vec());
            Ok::<_, ModelError>(layer.forward(&bound, v[k], 3)?.mul(v[k + 1])?.sum()?)
        })
        .unwrap();
        assert!(report.kink_margin > 1e-5, "margin {}", report.kink_margin);
        assert!(report.max_rel_error < 1e-5, "relative error {}", report.max_rel_error);
    }

    fn head_fixture(kind: AuxKind, layers: usize, seed: u64) -> (ParamSet, AuxHead, Vec<WindowedBarcodes>, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wp = plan(8, 5).unwrap();
        let x = random(&mut rng, &[3, 8]);
        let wbs: Vec<WindowedBarcodes> = (0..3).map(|b| windowed_barcodes(x.row(b), &wp).unwrap()).collect();
        let sub = wbs.iter().flat_map(|w| &w.sub);
        let sup = wbs.iter().flat_map(|w| &w.sup);
        let shape = AuxShape { plan: wp, coord_functions: 2, heads: 2, layers, mlp_hidden: 6 };
        let banks = (
            crate::vectorize::kmeanspp_init(sub, 2, &mut rng).unwrap(),
            crate::vectorize::kmeanspp_init(sup, 2, &mut rng).unwrap(),
        );
        let mut ps = ParamSet::new();
        let head = AuxHead::init(&mut ps, kind, shape, Some((&banks.0, &banks.1)), &mut rng).unwrap();
        assert_eq!(ps.scalar_count(), AuxHead::scalar_count(kind, &shape));
        (ps, head, wbs, x)
    }

    #[test]
    fn heads_produce_length_t_signals() {
        for kind in [AuxKind::Top, AuxKind::Attn, AuxKind::TopAttn] {
            let (ps, head, wbs, x) = head_fixture(kind, 2, 6);
            let g = Graph::new();
            let v = head.forward(&ps.bind(&g), g.constant(x), &wbs).unwrap();
            assert_eq!(v.shape(), vec![3, 8]);
            assert!(v.value().all_finite());
        }
    }

    #[test]
    fn top_attn_without_layers_is_top() {
        let (ps_a, head_a, wbs, x) = head_fixture(AuxKind::TopAttn, 0, 7);
        let (ps_b, head_b, _, _) = head_fixture(AuxKind::Top, 2, 7);
        assert_eq!(ps_a, ps_b);
        let g = Graph::new();
        let va = head_a.forward(&ps_a.bind(&g), g.constant(x.clone()), &wbs).unwrap();
        let vb = head_b.forward(&ps_b.bind(&g), g.constant(x), &wbs).unwrap();
        assert_eq!(va.value().data(), vb.value().data());
    }

    #[test]
    fn raw_window_head_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = AuxShape { plan: plan(2, 2).unwrap(), coord_functions: 1, heads: 4, layers: 1, mlp_hidden: 3 };
        let mut ps = ParamSet::new();
        let head = AuxHead::init(&mut ps, AuxKind::Attn, shape, None, &mut rng).unwrap();
        assert_eq!(head.layers()[0].heads, 2);
        let g = Graph::new();
        let v = head.forward(&ps.bind(&g), g.constant(Tensor::new(vec![1, 2], vec![0.3, -0.2]).unwrap()), &[]).unwrap();
        assert_eq!(v.shape(), vec![1, 2]);
        assert!(v.value().all_finite());
        assert_eq!(fit_heads(10, 4), 2);
        assert_eq!(fit_heads(7, 4), 1);
    }
}
