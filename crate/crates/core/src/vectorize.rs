//! Learnable barcode vectorization with rational-hat coordinate functions.
//!
//! A coordinate function with center `c` and radius `r` maps a bar
//! `p = (birth, death)` to
//!
//! ```text
//! s(p) = 1 / (1 + |p - c|_1) - 1 / (1 + ||r| - |p - c|_1|)
//! ```
//!
//! and a barcode to the sum of `s` over its bars. A bank of `e` functions
//! yields an `e`-dimensional vector; sublevel and superlevel barcodes use
//! separate banks, so each window contributes `2e` features.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{self, Backward, Graph, Tensor, Var};
use crate::persistence::Barcode;
use crate::windowing::WindowedBarcodes;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorizeError {
    #[error("banks have different sizes ({sub} vs {sup})")]
    BankMismatch { sub: usize, sup: usize },
    #[error("coordinate function bank is empty")]
    EmptyBank,
    #[error("no bars available to initialize coordinate functions")]
    NoBars,
    #[error("malformed bank encoding: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateFunction {
    pub center: (f64, f64),
    pub radius: f64,
}

/// Value of a coordinate function at `p` together with its partial
/// derivatives with respect to `(center.0, center.1, radius)`. Kinks get a
/// zero subgradient.
pub fn rational_hat(center: (f64, f64), radius: f64, p: (f64, f64)) -> (f64, [f64; 3]) {
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    let dist = dx.abs() + dy.abs();
    let rho = radius.abs();
    let gap = rho - dist;
    let near = 1.0 / (1.0 + dist);
    let far = 1.0 / (1.0 + gap.abs());
    let value = near - far;

    // d value / d dist and d value / d rho
    let d_dist = -near * near - signum0(gap) * far * far;
    let d_rho = signum0(gap) * far * far;
    let grads = [
        -signum0(dx) * d_dist,
        -signum0(dy) * d_dist,
        d_rho * signum0(radius),
    ];
    (value, grads)
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn eval_coordinate(f: &CoordinateFunction, bar: (f64, f64)) -> f64 {
    rational_hat(f.center, f.radius, bar).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateFunctionBank {
    pub functions: Vec<CoordinateFunction>,
}

impl CoordinateFunctionBank {
    pub fn new(functions: Vec<CoordinateFunction>) -> Result<Self, VectorizeError> {
        if functions.is_empty() {
            return Err(VectorizeError::EmptyBank);
        }
        Ok(Self { functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        3 * self.len()
    }

    /// `e × 2` centers tensor.
    pub fn centers(&self) -> Tensor {
        let data = self.functions.iter().flat_map(|f| [f.center.0, f.center.1]).collect();
        Tensor::new(vec![self.len(), 2], data).expect("e × 2")
    }

    /// Length-`e` radii tensor.
    pub fn radii(&self) -> Tensor {
        Tensor::vector(self.functions.iter().map(|f| f.radius).collect())
    }

    pub fn from_tensors(centers: &Tensor, radii: &Tensor) -> Result<Self, VectorizeError> {
        let e = radii.len();
        if centers.shape() != [e, 2] {
            return Err(VectorizeError::Decode(format!(
                "centers shape {:?} does not match {e} radii",
                centers.shape()
            )));
        }
        let functions = (0..e)
            .map(|k| CoordinateFunction {
                center: (centers.at(k, 0), centers.at(k, 1)),
                radius: radii.data()[k],
            })
            .collect();
        Self::new(functions)
    }

    /// JSON list of `[cx, cy, r]` triples in bank order.
    pub fn to_json(&self) -> String {
        let triples: Vec<[f64; 3]> =
            self.functions.iter().map(|f| [f.center.0, f.center.1, f.radius]).collect();
        serde_json::to_string(&triples).expect("finite floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, VectorizeError> {
        let triples: Vec<[f64; 3]> =
            serde_json::from_str(text).map_err(|e| VectorizeError::Decode(e.to_string()))?;
        Self::new(
            triples
                .into_iter()
                .map(|[cx, cy, r]| CoordinateFunction { center: (cx, cy), radius: r })
                .collect(),
        )
    }

    /// Flat little-endian `f64` triples.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.functions
            .iter()
            .flat_map(|f| [f.center.0, f.center.1, f.radius])
            .flat_map(f64::to_le_bytes)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VectorizeError> {
        if !bytes.len().is_multiple_of(24) {
            return Err(VectorizeError::Decode(format!("{} bytes is not a multiple of 24", bytes.len())));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(
            vals.chunks_exact(3)
                .map(|t| CoordinateFunction { center: (t[0], t[1]), radius: t[2] })
                .collect(),
        )
    }
}

/// `e`-dimensional vectorization of one barcode; every bar, essential
/// included, contributes.
pub fn vectorize_barcode(barcode: &Barcode, bank: &CoordinateFunctionBank) -> Vec<f64> {
    bank.functions
        .iter()
        .map(|f| barcode.points().map(|p| eval_coordinate(f, p)).sum())
        .collect()
}

/// `W × 2e` matrix: row `j` is the sublevel vectorization of window `j`
/// followed by its superlevel vectorization.
pub fn topvec(
    wb: &WindowedBarcodes,
    bank_sub: &CoordinateFunctionBank,
    bank_sup: &CoordinateFunctionBank,
) -> Result<Tensor, VectorizeError> {
    if bank_sub.len() != bank_sup.len() {
        return Err(VectorizeError::BankMismatch { sub: bank_sub.len(), sup: bank_sup.len() });
    }
    let rows: Vec<Vec<f64>> = wb
        .sub
        .iter()
        .zip(&wb.sup)
        .map(|(sub, sup)| {
            let mut row = vectorize_barcode(sub, bank_sub);
            row.extend(vectorize_barcode(sup, bank_sup));
            row
        })
        .collect();
    Ok(Tensor::from_rows(&rows).expect("equal row widths"))
}

struct VectorizeRule {
    rows: Vec<Vec<(f64, f64)>>,
}

impl Backward for VectorizeRule {
    fn backward(&self, parents: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (centers, radii) = (parents[0], parents[1]);
        let e = radii.len();
        let mut gc = Tensor::zeros(&[e, 2]);
        let mut gr = Tensor::zeros(&[e]);
        for (row, bars) in self.rows.iter().enumerate() {
            for k in 0..e {
                let g = grad.at(row, k);
                if g == 0.0 {
                    continue;
                }
                let c = (centers.at(k, 0), centers.at(k, 1));
                let r = radii.data()[k];
                for &p in bars {
                    let (_, d) = rational_hat(c, r, p);
                    gc.data_mut()[2 * k] += g * d[0];
                    gc.data_mut()[2 * k + 1] += g * d[1];
                    gr.data_mut()[k] += g * d[2];
                }
            }
        }
        vec![Some(gc), Some(gr)]
    }

    fn kink_margin(&self, parents: &[&Tensor]) -> f64 {
        let (centers, radii) = (parents[0], parents[1]);
        let mut margin = f64::INFINITY;
        for k in 0..radii.len() {
            let (cx, cy, r) = (centers.at(k, 0), centers.at(k, 1), radii.data()[k]);
            margin = margin.min(r.abs());
            for &(b, d) in self.rows.iter().flatten() {
                let dist = (b - cx).abs() + (d - cy).abs();
                margin = margin.min((b - cx).abs()).min((d - cy).abs()).min((r.abs() - dist).abs());
            }
        }
        margin
    }
}

/// Records the vectorization of a list of barcodes as a graph node of shape
/// `barcodes × e`, differentiable in `centers` (`e × 2`) and `radii` (`e`).
pub fn vectorize_var<'g>(
    barcodes: &[&Barcode],
    centers: Var<'g>,
    radii: Var<'g>,
) -> autodiff::Result<Var<'g>> {
    let rows: Vec<Vec<(f64, f64)>> = barcodes.iter().map(|b| b.points().collect()).collect();
    let value = {
        let (c, r) = (centers.value(), radii.value());
        let e = r.len();
        if c.shape() != [e, 2] {
            return Err(autodiff::AutodiffError::ShapeMismatch {
                op: "vectorize",
                lhs: c.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * e);
        for bars in &rows {
            for k in 0..e {
                let ck = (c.at(k, 0), c.at(k, 1));
                let rk = r.data()[k];
                data.push(bars.iter().map(|&p| rational_hat(ck, rk, p).0).sum());
            }
        }
        Tensor::new(vec![rows.len(), e], data)?
    };
    let graph: &'g Graph = centers.graph();
    Ok(graph.custom(&[centers, radii], value, Box::new(VectorizeRule { rows })))
}

const KMEANS_TOL: f64 = 1e-6;
const KMEANS_MAX_ITERS: usize = 100;

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// k-means++ seeding followed by Lloyd iterations on the pooled bar
/// endpoints, with `k = e`. Radii are the mean within-cluster L1 distance to
/// the center (1.0 when a cluster has a single member or zero spread).
pub fn kmeanspp_init<'a, R: Rng>(
    barcodes: impl IntoIterator<Item = &'a Barcode>,
    e: usize,
    rng: &mut R,
) -> Result<CoordinateFunctionBank, VectorizeError> {
    if e == 0 {
        return Err(VectorizeError::EmptyBank);
    }
    let points: Vec<(f64, f64)> = barcodes.into_iter().flat_map(|b| b.points()).collect();
    if points.is_empty() {
        return Err(VectorizeError::NoBars);
    }

    let mut centers = Vec::with_capacity(e);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut nearest: Vec<f64> = points.iter().map(|&p| sq_dist(p, centers[0])).collect();
    while centers.len() < e {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centers.push(c);
        for (n, &p) in nearest.iter_mut().zip(&points) {
            *n = n.min(sq_dist(p, c));
        }
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        for (a, &p) in assignment.iter_mut().zip(&points) {
            *a = (0..e)
                .min_by(|&i, &j| sq_dist(p, centers[i]).total_cmp(&sq_dist(p, centers[j])))
                .expect("e >= 1");
        }
        let mut sums = vec![(0.0, 0.0, 0usize); e];
        for (&a, &p) in assignment.iter().zip(&points) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        let mut shift: f64 = 0.0;
        for (c, &(sx, sy, n)) in centers.iter_mut().zip(&sums) {
            if n == 0 {
                continue;
            }
            let next = (sx / n as f64, sy / n as f64);
            shift = shift.max(sq_dist(*c, next).sqrt());
            *c = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    for (a, &p) in assignment.iter_mut().zip(&points) {
        *a = (0..e)
            .min_by(|&i, &j| sq_dist(p, centers[i]).total_cmp(&sq_dist(p, centers[j])))
            .expect("e >= 1");
    }

    let functions = centers
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let members: Vec<(f64, f64)> =
                points.iter().zip(&assignment).filter(|(_, &a)| a == k).map(|(&p, _)| p).collect();
            let spread = if members.len() > 1 {
                members.iter().map(|p| (p.0 - c.0).abs() + (p.1 - c.1).abs()).sum::<f64>()
                    / members.len() as f64
            } else {
                0.0
            };
            CoordinateFunction { center: c, radius: if spread > 0.0 { spread } else { 1.0 } }
        })
        .collect();
    CoordinateFunctionBank::new(functions)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::persistence::{lower_star_barcode, Bar};

    fn barcode(points: &[(f64, f64)]) -> Barcode {
        Barcode::from_bars(
            points
                .iter()
                .enumerate()
                .map(|(i, &(b, d))| Bar {
                    birth: b,
                    death: d,
                    essential: i == 0,
                    birth_index: 0,
                    death_index: 0,
                })
                .collect(),
        )
    }

    fn f(cx: f64, cy: f64, r: f64) -> CoordinateFunction {
        CoordinateFunction { center: (cx, cy), radius: r }
    }

    #[test]
    fn hat_values() {
        assert_eq!(eval_coordinate(&f(1.0, 2.0, 1.0), (1.0, 2.0)), 0.5);
        // on the rim: |p - c|_1 = |r|
        let r = 1.5;
        assert_eq!(eval_coordinate(&f(0.0, 0.0, -r), (0.5, 1.0)), 1.0 / (1.0 + r) - 1.0);
        assert_eq!(eval_coordinate(&f(0.0, 0.0, 2.0), (1.0, 0.0)), 0.0);
    }

    #[test]
    fn vectorize_examples() {
        let bank = CoordinateFunctionBank::new(vec![f(3.0, 3.0, 1.0)]).unwrap();
        assert_eq!(vectorize_barcode(&barcode(&[(3.0, 3.0)]), &bank), vec![0.5]);

        let bank = CoordinateFunctionBank::new(vec![f(0.0, 0.0, 0.0)]).unwrap();
        let b = barcode(&[(0.0, 4.0), (1.0, 3.0), (2.0, 4.0)]);
        assert_eq!(vectorize_barcode(&b, &bank), vec![0.0]);
    }

    #[test]
    fn vectorization_is_additive_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bank = CoordinateFunctionBank::new(
            (0..4)
                .map(|_| f(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.1..3.0)))
                .collect(),
        )
        .unwrap();
        for _ in 0..50 {
            let p1: Vec<(f64, f64)> = (0..5).map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let p2: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let joined: Vec<_> = p1.iter().chain(&p2).copied().collect();
            let v1 = vectorize_barcode(&barcode(&p1), &bank);
            let v2 = vectorize_barcode(&barcode(&p2), &bank);
            let vj = vectorize_barcode(&barcode(&joined), &bank);
            for k in 0..4 {
                assert!((vj[k] - v1[k] - v2[k]).abs() < 1e-12);
            }
            let mut reversed = joined.clone();
            reversed.reverse();
            let vr = vectorize_barcode(&barcode(&reversed), &bank);
            for k in 0..4 {
                assert!((vr[k] - vj[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coordinate_is_two_lipschitz_in_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let g = f(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
            let p: (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let q = (p.0 + rng.random_range(-0.1..0.1), p.1 + rng.random_range(-0.1..0.1));
            let l1 = (p.0 - q.0).abs() + (p.1 - q.1).abs();
            assert!((eval_coordinate(&g, p) - eval_coordinate(&g, q)).abs() <= 2.0 * l1 + 1e-15);
        }
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 500 {
            let c: (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let r: f64 = rng.random_range(-3.0..3.0);
            let p = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let dist = (p.0 - c.0).abs() + (p.1 - c.1).abs();
            let margin = (p.0 - c.0).abs().min((p.1 - c.1).abs()).min((r.abs() - dist).abs()).min(r.abs());
            if margin < 1e-3 {
                continue;
            }
            let (_, d) = rational_hat(c, r, p);
            let fd = [
                (rational_hat((c.0 + h, c.1), r, p).0 - rational_hat((c.0 - h, c.1), r, p).0) / (2.0 * h),
                (rational_hat((c.0, c.1 + h), r, p).0 - rational_hat((c.0, c.1 - h), r, p).0) / (2.0 * h),
                (rational_hat(c, r + h, p).0 - rational_hat(c, r - h, p).0) / (2.0 * h),
            ];
            for i in 0..3 {
                let rel = (d[i] - fd[i]).abs() / d[i].abs().max(fd[i].abs()).max(1e-6);
                assert!(rel <= 1e-4, "{i}: analytic {} numeric {}", d[i], fd[i]);
            }
            checked += 1;
        }
    }

    #[test]
    fn graph_op_matches_direct_vectorization() {
        let b1 = lower_star_barcode(&[0.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        let b2 = lower_star_barcode(&[2.0, -1.0, 0.5]).unwrap();
        let bank = CoordinateFunctionBank::new(vec![f(0.3, 2.9, 1.2), f(1.7, 3.6, -0.8)]).unwrap();
        let g = Graph::new();
        let out = vectorize_var(&[&b1, &b2], g.param(bank.centers()), g.param(bank.radii())).unwrap();
        let direct = [vectorize_barcode(&b1, &bank), vectorize_barcode(&b2, &bank)].concat();
        assert_eq!(out.value().data(), direct.as_slice());
    }

    #[test]
    fn graph_op_gradients() {
        use crate::gradcheck::{check_gradients, GradCheckOptions};
        let codes: Vec<Barcode> = [[0.0, 3.1, 1.2, 4.4, 2.3, 0.7], [2.2, -1.3, 0.55, 1.9, -0.4, 3.3]]
            .iter()
            .map(|x| lower_star_barcode(x).unwrap())
            .collect();
        let bank = CoordinateFunctionBank::new(vec![f(0.33, 2.87, 1.21), f(1.71, 3.62, -0.83), f(-0.9, 1.05, 2.4)]).unwrap();
        let w = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3]).unwrap();
        let report = check_gradients(&[bank.centers(), bank.radii(), w], GradCheckOptions::default(), |_, v| {
            vectorize_var(&[&codes[0], &codes[1]], v[0], v[1])?.mul(v[2])?.sum()
        })
        .unwrap();
        assert!(report.kink_margin > 1e-4, "margin {}", report.kink_margin);
        assert!(report.max_rel_error < 1e-6, "relative error {}", report.max_rel_error);
    }

    #[test]
    fn topvec_shape_and_bank_mismatch() {
        let x = [0.0, 3.0, 1.0, 4.0, 2.0, 5.0, -1.0];
        let wb = crate::windowing::windowed_barcodes(&x, &crate::windowing::plan(7, 4).unwrap()).unwrap();
        let bank = CoordinateFunctionBank::new(vec![f(0.0, 1.0, 1.0), f(1.0, 2.0, 2.0), f(2.0, 3.0, 0.5)]).unwrap();
        let a = topvec(&wb, &bank, &bank).unwrap();
        assert_eq!(a.shape(), &[4, 6]);
        let small = CoordinateFunctionBank::new(vec![f(0.0, 1.0, 1.0)]).unwrap();
        assert_eq!(topvec(&wb, &bank, &small), Err(VectorizeError::BankMismatch { sub: 3, sup: 1 }));
        // single window: the row is the concatenation of both vectorizations
        let wb1 = crate::windowing::windowed_barcodes(&x[..4], &crate::windowing::plan(4, 4).unwrap()).unwrap();
        let a1 = topvec(&wb1, &bank, &bank).unwrap();
        let expected = [vectorize_barcode(&wb1.sub[0], &bank), vectorize_barcode(&wb1.sup[0], &bank)].concat();
        assert_eq!(a1.data(), expected.as_slice());
    }

    #[test]
    fn kmeans_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = barcode(&[(0.0, 1.0), (0.0, 3.0)]);
        let bank = kmeanspp_init([&pool], 1, &mut rng).unwrap();
        assert_eq!(bank.functions, vec![f(0.0, 2.0, 1.0)]);

        let pts = [(0.0, 1.0), (5.0, 9.0), (-3.0, 2.0)];
        let pool = barcode(&pts);
        let bank = kmeanspp_init([&pool], 3, &mut rng).unwrap();
        let mut centers: Vec<_> = bank.functions.iter().map(|g| g.center).collect();
        centers.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(centers, vec![(-3.0, 2.0), (0.0, 1.0), (5.0, 9.0)]);
        assert!(bank.functions.iter().all(|g| g.radius == 1.0));

        assert_eq!(kmeanspp_init(std::iter::empty(), 2, &mut rng), Err(VectorizeError::NoBars));
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let codes: Vec<Barcode> = (0..20)
            .map(|s| {
                let x: Vec<f64> = (0..15).map(|i| ((i * 31 + s * 17) % 11) as f64).collect();
                lower_star_barcode(&x).unwrap()
            })
            .collect();
        let a = kmeanspp_init(&codes, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = kmeanspp_init(&codes, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bank_serialization_round_trip() {
        let bank = CoordinateFunctionBank::new(vec![f(0.1, -2.5, 1.0 / 3.0), f(7.0, 8.0, -0.25)]).unwrap();
        assert_eq!(CoordinateFunctionBank::from_json(&bank.to_json()).unwrap(), bank);
        assert_eq!(CoordinateFunctionBank::from_bytes(&bank.to_bytes()).unwrap(), bank);
        assert!(CoordinateFunctionBank::from_bytes(&[0u8; 10]).is_err());
    }
}
