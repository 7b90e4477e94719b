//! Forward kernels and local gradient rules.

use super::tensor::{broadcast_indices, broadcast_shape, split_axis};
use super::{AutodiffError, Op, Result, Tensor};

pub(crate) fn broadcast_apply(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let (da, db) = (a.data(), b.data());
    let data = broadcast_indices(a.shape(), b.shape(), &shape)
        .into_iter()
        .map(|(i, j)| f(da[i], db[j]))
        .collect();
    Tensor::new(shape, data)
}

/// Sums a broadcast gradient back down to `shape`.
fn unbroadcast(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape);
    let g = grad.data();
    let o = out.data_mut();
    for (k, (i, _)) in broadcast_indices(shape, grad.shape(), grad.shape()).into_iter().enumerate() {
        o[i] += g[k];
    }
    out
}

/// Elementwise partials of a broadcast binary op, reduced to each operand's
/// shape.
fn binary_grads(
    a: &Tensor,
    b: &Tensor,
    grad: &Tensor,
    da: impl Fn(f64, f64) -> f64,
    db: impl Fn(f64, f64) -> f64,
) -> (Tensor, Tensor) {
    let out_shape = grad.shape();
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    let (av, bv, g) = (a.data(), b.data(), grad.data());
    {
        let gad = ga.data_mut();
        for (k, (i, j)) in broadcast_indices(a.shape(), b.shape(), out_shape).into_iter().enumerate() {
            gad[i] += g[k] * da(av[i], bv[j]);
        }
    }
    {
        let gbd = gb.data_mut();
        for (k, (i, j)) in broadcast_indices(a.shape(), b.shape(), out_shape).into_iter().enumerate() {
            gbd[j] += g[k] * db(av[i], bv[j]);
        }
    }
    (ga, gb)
}

pub fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || AutodiffError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (m, k) = a.dims2().ok_or_else(mismatch)?;
    let (k2, n) = b.dims2().ok_or_else(mismatch)?;
    if k != k2 {
        return Err(mismatch());
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose_forward(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
        op: "transpose",
        lhs: a.shape().to_vec(),
        rhs: vec![],
    })?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn concat_forward(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(AutodiffError::SingularAxis { op: "concat", axis, shape: first.to_vec() });
    }
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        let compatible = s.len() == first.len()
            && s.iter().zip(first).enumerate().all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(AutodiffError::ShapeMismatch { op: "concat", lhs: first.to_vec(), rhs: s.to_vec() });
        }
        total += s[axis];
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(shape, data)
}

pub(crate) fn slice_forward(a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = a.shape();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(AutodiffError::SingularAxis { op: "slice", axis, shape: shape.to_vec() });
    }
    let (outer, alen, inner) = split_axis(shape, axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * alen * inner;
        data.extend_from_slice(&a.data()[base + start * inner..base + (start + len) * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Tensor::new(out_shape, data)
}

pub(crate) fn broadcast_to_forward(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    match broadcast_shape(a.shape(), shape) {
        Some(s) if s == shape => {
            let d = a.data();
            let data = broadcast_indices(a.shape(), shape, shape).into_iter().map(|(i, _)| d[i]).collect();
            Tensor::new(shape.to_vec(), data)
        }
        _ => Err(AutodiffError::ShapeMismatch {
            op: "broadcast_to",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        }),
    }
}

fn check_axis(op: &'static str, a: &Tensor, axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= a.rank() || a.shape()[axis] == 0 {
        return Err(AutodiffError::SingularAxis { op, axis, shape: a.shape().to_vec() });
    }
    Ok(split_axis(a.shape(), axis))
}

/// Softmax along `axis`, stabilized by subtracting the maximum.
pub fn softmax_forward(a: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = check_axis("softmax", a, axis)?;
    let d = a.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * n * inner + j * inner + i;
            let max = (0..n).map(|j| d[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                let e = (d[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..n {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// Returns the normalized tensor and the per-lane inverse standard deviation.
pub fn layer_norm_forward(a: &Tensor, axis: usize, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let (outer, n, inner) = check_axis("layer_norm", a, axis)?;
    let d = a.data();
    let mut out = vec![0.0; d.len()];
    let mut inv_stds = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * n * inner + j * inner + i;
            let mean = (0..n).map(|j| d[idx(j)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|j| (d[idx(j)] - mean).powi(2)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[idx(j)] = (d[idx(j)] - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
    }
    Ok((Tensor::new(a.shape().to_vec(), out)?, inv_stds))
}

/// Forward pass of block-diagonal attention. Returns the output and the
/// attention probabilities, stored block after block, each `block × block`.
pub fn block_attention_forward(q: &Tensor, k: &Tensor, v: &Tensor, block: usize) -> Result<(Tensor, Vec<f64>)> {
    let mismatch = |rhs: &Tensor| AutodiffError::ShapeMismatch {
        op: "block_attention",
        lhs: q.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    };
    let (rows, dk) = q.dims2().ok_or_else(|| mismatch(k))?;
    let (krows, kdk) = k.dims2().ok_or_else(|| mismatch(k))?;
    let (vrows, dv) = v.dims2().ok_or_else(|| mismatch(v))?;
    if krows != rows || kdk != dk {
        return Err(mismatch(k));
    }
    if vrows != rows {
        return Err(mismatch(v));
    }
    if block == 0 || rows % block != 0 {
        return Err(AutodiffError::SingularAxis { op: "block_attention", axis: 0, shape: q.shape().to_vec() });
    }
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let blocks = rows / block;
    let mut probs = vec![0.0; blocks * block * block];
    let mut out = vec![0.0; rows * dv];
    for b in 0..blocks {
        let r0 = b * block;
        let p = &mut probs[b * block * block..(b + 1) * block * block];
        for i in 0..block {
            let qi = &qd[(r0 + i) * dk..(r0 + i + 1) * dk];
            let prow = &mut p[i * block..(i + 1) * block];
            for (j, s) in prow.iter_mut().enumerate() {
                let kj = &kd[(r0 + j) * dk..(r0 + j + 1) * dk];
                *s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
            }
            let max = prow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in prow.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for s in prow.iter_mut() {
                *s /= total;
            }
            let orow = &mut out[(r0 + i) * dv..(r0 + i + 1) * dv];
            for (j, &w) in prow.iter().enumerate() {
                let vj = &vd[(r0 + j) * dv..(r0 + j + 1) * dv];
                for (o, &x) in orow.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
    }
    Ok((Tensor::new(vec![rows, dv], out)?, probs))
}

fn block_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    block: usize,
    probs: &[f64],
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (rows, dk) = q.dims2().expect("checked in forward");
    let dv = v.shape()[1];
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd, vd, g) = (q.data(), k.data(), v.data(), grad.data());
    let mut gq = vec![0.0; rows * dk];
    let mut gk = vec![0.0; rows * dk];
    let mut gv = vec![0.0; rows * dv];
    let mut dp = vec![0.0; block];
    for b in 0..rows / block {
        let r0 = b * block;
        let p = &probs[b * block * block..(b + 1) * block * block];
        for i in 0..block {
            let gi = &g[(r0 + i) * dv..(r0 + i + 1) * dv];
            let prow = &p[i * block..(i + 1) * block];
            // dV_j += P_ij dO_i ; dP_ij = dO_i · V_j
            for j in 0..block {
                let vj = &vd[(r0 + j) * dv..(r0 + j + 1) * dv];
                dp[j] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                let gvj = &mut gv[(r0 + j) * dv..(r0 + j + 1) * dv];
                for (o, &x) in gvj.iter_mut().zip(gi) {
                    *o += prow[j] * x;
                }
            }
            let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..block {
                let ds = prow[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dk {
                    gq[(r0 + i) * dk + c] += ds * kd[(r0 + j) * dk + c];
                    gk[(r0 + j) * dk + c] += ds * qd[(r0 + i) * dk + c];
                }
            }
        }
    }
    (
        Tensor::new(vec![rows, dk], gq).expect("shape"),
        Tensor::new(vec![rows, dk], gk).expect("shape"),
        Tensor::new(vec![rows, dv], gv).expect("shape"),
    )
}

pub(crate) fn backward(op: &Op, parents: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
    match op {
        Op::Leaf => vec![],
        Op::Add(..) => vec![
            Some(unbroadcast(grad, parents[0].shape())),
            Some(unbroadcast(grad, parents[1].shape())),
        ],
        Op::Sub(..) => vec![
            Some(unbroadcast(grad, parents[0].shape())),
            Some(unbroadcast(&grad.map(|x| -x), parents[1].shape())),
        ],
        Op::Mul(..) => {
            let (ga, gb) = binary_grads(parents[0], parents[1], grad, |_, b| b, |a, _| a);
            vec![Some(ga), Some(gb)]
        }
        Op::Div(..) => {
            let (ga, gb) = binary_grads(parents[0], parents[1], grad, |_, b| 1.0 / b, |a, b| -a / (b * b));
            vec![Some(ga), Some(gb)]
        }
        Op::DivOrZero(..) => {
            let (ga, gb) = binary_grads(
                parents[0],
                parents[1],
                grad,
                |_, b| if b == 0.0 { 0.0 } else { 1.0 / b },
                |a, b| if b == 0.0 { 0.0 } else { -a / (b * b) },
            );
            vec![Some(ga), Some(gb)]
        }
        Op::AddScalar(_) | Op::Reshape(_) => {
            let g = grad.clone().reshaped(parents[0].shape()).expect("same length");
            vec![Some(g)]
        }
        Op::MulScalar(_, c) => vec![Some(grad.map(|x| x * c))],
        Op::MatMul(..) => {
            let (a, b) = (parents[0], parents[1]);
            let bt = transpose_forward(b).expect("rank 2");
            let at = transpose_forward(a).expect("rank 2");
            vec![
                Some(matmul_forward(grad, &bt).expect("shapes")),
                Some(matmul_forward(&at, grad).expect("shapes")),
            ]
        }
        Op::Transpose(_) => vec![Some(transpose_forward(grad).expect("rank 2"))],
        Op::Concat { axis, .. } => {
            let mut offset = 0;
            parents
                .iter()
                .map(|p| {
                    let len = p.shape()[*axis];
                    let g = slice_forward(grad, *axis, offset, len).expect("in range");
                    offset += len;
                    Some(g)
                })
                .collect()
        }
        Op::Slice { axis, start, .. } => {
            let shape = parents[0].shape();
            let (outer, alen, inner) = split_axis(shape, *axis);
            let len = grad.shape()[*axis];
            let mut g = Tensor::zeros(shape);
            let gd = g.data_mut();
            for o in 0..outer {
                let dst = o * alen * inner + start * inner;
                let src = o * len * inner;
                gd[dst..dst + len * inner].copy_from_slice(&grad.data()[src..src + len * inner]);
            }
            vec![Some(g)]
        }
        Op::BroadcastTo(_) => vec![Some(unbroadcast(grad, parents[0].shape()))],
        Op::Relu(_) => {
            let a = parents[0].data();
            let data = grad.data().iter().zip(a).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
            vec![Some(Tensor::new(grad.shape().to_vec(), data).expect("shape"))]
        }
        Op::Abs(_) => {
            let a = parents[0].data();
            let data = grad
                .data()
                .iter()
                .zip(a)
                .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                .collect();
            vec![Some(Tensor::new(grad.shape().to_vec(), data).expect("shape"))]
        }
        Op::Softmax { axis, .. } => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let (y, g) = (out.data(), grad.data());
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| o * n * inner + j * inner + i;
                    let dot: f64 = (0..n).map(|j| y[idx(j)] * g[idx(j)]).sum();
                    for j in 0..n {
                        gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(out.shape().to_vec(), gx).expect("shape"))]
        }
        Op::LayerNorm { axis, inv_std, .. } => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let (y, g) = (out.data(), grad.data());
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| o * n * inner + j * inner + i;
                    let s = inv_std[o * inner + i];
                    let mean_g: f64 = (0..n).map(|j| g[idx(j)]).sum::<f64>() / n as f64;
                    let mean_gy: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[idx(j)] = s * (g[idx(j)] - mean_g - y[idx(j)] * mean_gy);
                    }
                }
            }
            vec![Some(Tensor::new(out.shape().to_vec(), gx).expect("shape"))]
        }
        Op::Sum(_) => vec![Some(Tensor::full(parents[0].shape(), grad.item()))],
        Op::Mean(_) => {
            let n = parents[0].len() as f64;
            vec![Some(Tensor::full(parents[0].shape(), grad.item() / n))]
        }
        Op::BlockAttention { block, probs, .. } => {
            let (gq, gk, gv) = block_attention_backward(parents[0], parents[1], parents[2], *block, probs, grad);
            vec![Some(gq), Some(gk), Some(gv)]
        }
        Op::Custom { rule, .. } => rule.backward(parents, out, grad),
    }
}
