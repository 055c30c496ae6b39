//! Primitive operations: forward kernels and their reverse-mode rules.
//!
//! Every primitive is a pure function of its argument tensors. The same kernel
//! runs whether or not a tape is recording, so recorded and unrecorded
//! evaluation agree bit for bit.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fill value for empty segments of `SegmentMax`.
pub const EMPTY_SEGMENT_FILL: f64 = -1e9;

/// Sentinel argmax entry marking an empty segment.
const NO_ARG: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// Elementwise; the right operand may also be a single value or a vector
    /// matching the last axis of the left operand.
    Add,
    Sub,
    Mul,
    /// Multiply by a constant.
    Scale(f64),
    Relu,
    /// Identity for `x >= knee`, `knee + slope * (x - knee)` below it.
    LeakyReluOffset { knee: f64, slope: f64 },
    Sigmoid,
    Tanh,
    Softplus,
    SoftmaxRows,
    LogSoftmaxRows,
    /// `[r,c] -> [r]`
    LogSumExpRows,
    /// Concatenate along `axis`; all other axes must agree.
    Concat { axis: usize },
    /// Select rows of the leading axis.
    Gather { indices: Arc<[usize]> },
    /// Sum rows into `num_segments` buckets.
    SegmentSum {
        segments: Arc<[usize]>,
        num_segments: usize,
    },
    /// Elementwise max of rows per bucket. Ties go to the lowest row index;
    /// empty buckets hold [`EMPTY_SEGMENT_FILL`].
    SegmentMax {
        segments: Arc<[usize]>,
        num_segments: usize,
    },
    /// Normalise each row to zero mean and unit variance (no affine).
    LayerNorm { eps: f64 },
    /// Mean of all entries, rank-0 result.
    Mean,
    /// Sum of all entries, rank-0 result.
    Sum,
    /// Euclidean norm of all entries, rank-0 result.
    L2Norm,
    Transpose,
    Reshape { shape: Vec<usize> },
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Scale(_) => "scale",
            Prim::Relu => "relu",
            Prim::LeakyReluOffset { .. } => "leaky_relu_offset",
            Prim::Sigmoid => "sigmoid",
            Prim::Tanh => "tanh",
            Prim::Softplus => "softplus",
            Prim::SoftmaxRows => "softmax_rows",
            Prim::LogSoftmaxRows => "log_softmax_rows",
            Prim::LogSumExpRows => "logsumexp",
            Prim::Concat { .. } => "concat",
            Prim::Gather { .. } => "gather",
            Prim::SegmentSum { .. } => "scatter_segment_sum",
            Prim::SegmentMax { .. } => "scatter_segment_max",
            Prim::LayerNorm { .. } => "layer_norm",
            Prim::Mean => "mean",
            Prim::Sum => "sum",
            Prim::L2Norm => "l2_norm",
            Prim::Transpose => "transpose",
            Prim::Reshape { .. } => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Prim::MatMul | Prim::Add | Prim::Sub | Prim::Mul => Some(2),
            Prim::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Side information a kernel hands to its backward rule.
pub(crate) type Aux = Option<Arc<[usize]>>;

/// Evaluates a primitive without recording anything.
pub fn eval(prim: &Prim, args: &[&Tensor]) -> Result<Tensor> {
    forward(prim, args).map(|(t, _)| t)
}

pub(crate) fn forward(prim: &Prim, args: &[&Tensor]) -> Result<(Tensor, Aux)> {
    if let Some(n) = prim.arity() {
        if args.len() != n {
            return Err(Error::contract(format!(
                "`{}` takes {} argument(s), got {}",
                prim.name(),
                n,
                args.len()
            )));
        }
    } else if args.is_empty() {
        return Err(Error::contract(format!("`{}` needs arguments", prim.name())));
    }
    let out = match prim {
        Prim::MatMul => matmul(args[0], args[1])?,
        Prim::Add => broadcast_binary("add", args[0], args[1], |a, b| a + b)?,
        Prim::Sub => broadcast_binary("sub", args[0], args[1], |a, b| a - b)?,
        Prim::Mul => broadcast_binary("mul", args[0], args[1], |a, b| a * b)?,
        Prim::Scale(c) => args[0].scale(*c),
        Prim::Relu => args[0].map(|x| if x > 0.0 { x } else { 0.0 }),
        Prim::LeakyReluOffset { knee, slope } => {
            let (k, a) = (*knee, *slope);
            args[0].map(|x| if x >= k { x } else { k + a * (x - k) })
        }
        Prim::Sigmoid => args[0].map(sigmoid),
        Prim::Tanh => args[0].map(f64::tanh),
        Prim::Softplus => args[0].map(softplus),
        Prim::SoftmaxRows => rowwise(args[0], softmax_row)?,
        Prim::LogSoftmaxRows => rowwise(args[0], log_softmax_row)?,
        Prim::LogSumExpRows => {
            let x = args[0];
            let (r, c) = as_rows(x, "logsumexp")?;
            let data = x.data().chunks(c.max(1)).take(r).map(logsumexp).collect();
            Tensor::from_parts(vec![r], data)
        }
        Prim::Concat { axis } => concat(args, *axis)?,
        Prim::Gather { indices } => gather(args[0], indices)?,
        Prim::SegmentSum {
            segments,
            num_segments,
        } => segment_sum(args[0], segments, *num_segments)?,
        Prim::SegmentMax {
            segments,
            num_segments,
        } => {
            let (t, arg) = segment_max(args[0], segments, *num_segments)?;
            return Ok((t, Some(arg.into())));
        }
        Prim::LayerNorm { eps } => rowwise(args[0], |row, out| layer_norm_row(row, *eps, out))?,
        Prim::Mean => Tensor::scalar(args[0].sum() / args[0].len().max(1) as f64),
        Prim::Sum => Tensor::scalar(args[0].sum()),
        Prim::L2Norm => Tensor::scalar(args[0].norm()),
        Prim::Transpose => transpose(args[0])?,
        Prim::Reshape { shape } => args[0].reshaped(shape.clone())?,
    };
    Ok((out, None))
}

/// Gradient contributions for each argument given the output cotangent.
pub(crate) fn backward(
    prim: &Prim,
    args: &[&Tensor],
    out: &Tensor,
    aux: &Aux,
    grad: &Tensor,
) -> Result<Vec<Tensor>> {
    let g = grad;
    Ok(match prim {
        Prim::MatMul => {
            let (a, b) = (args[0], args[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            // dA = G B^T, dB = A^T G
            let mut da = vec![0.0; m * k];
            gemm(m, n, k, g.data(), (n, 1), b.data(), (1, n), &mut da);
            let mut db = vec![0.0; k * n];
            gemm(k, m, n, a.data(), (1, k), g.data(), (n, 1), &mut db);
            vec![
                Tensor::from_parts(vec![m, k], da),
                Tensor::from_parts(vec![k, n], db),
            ]
        }
        Prim::Add => vec![g.clone(), reduce_to(g, args[1])],
        Prim::Sub => vec![g.clone(), reduce_to(&g.scale(-1.0), args[1])],
        Prim::Mul => {
            let (a, b) = (args[0], args[1]);
            let ga = broadcast_binary("mul", g, b, |x, y| x * y)?;
            let gb_full = g.zip_map(a, |x, y| x * y)?;
            vec![ga, reduce_to(&gb_full, b)]
        }
        Prim::Scale(c) => vec![g.scale(*c)],
        Prim::Relu => vec![g.zip_map(args[0], |gi, x| if x > 0.0 { gi } else { 0.0 })?],
        Prim::LeakyReluOffset { knee, slope } => {
            let (k, a) = (*knee, *slope);
            vec![g.zip_map(args[0], |gi, x| if x >= k { gi } else { a * gi })?]
        }
        Prim::Sigmoid => vec![g.zip_map(out, |gi, y| gi * y * (1.0 - y))?],
        Prim::Tanh => vec![g.zip_map(out, |gi, y| gi * (1.0 - y * y))?],
        Prim::Softplus => vec![g.zip_map(args[0], |gi, x| gi * sigmoid(x))?],
        Prim::SoftmaxRows => {
            let w = out.row_len().max(1);
            let mut dx = vec![0.0; out.len()];
            for ((y, gr), d) in out
                .data()
                .chunks(w)
                .zip(g.data().chunks(w))
                .zip(dx.chunks_mut(w))
            {
                let s: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..w {
                    d[i] = y[i] * (gr[i] - s);
                }
            }
            vec![Tensor::from_parts(out.shape().to_vec(), dx)]
        }
        Prim::LogSoftmaxRows => {
            let w = out.row_len().max(1);
            let mut dx = vec![0.0; out.len()];
            for ((y, gr), d) in out
                .data()
                .chunks(w)
                .zip(g.data().chunks(w))
                .zip(dx.chunks_mut(w))
            {
                let s: f64 = gr.iter().sum();
                for i in 0..w {
                    d[i] = gr[i] - y[i].exp() * s;
                }
            }
            vec![Tensor::from_parts(out.shape().to_vec(), dx)]
        }
        Prim::LogSumExpRows => {
            let x = args[0];
            let w = x.row_len().max(1);
            let mut dx = vec![0.0; x.len()];
            for (r, (row, d)) in x.data().chunks(w).zip(dx.chunks_mut(w)).enumerate() {
                let lse = out.data()[r];
                for i in 0..w {
                    d[i] = g.data()[r] * (row[i] - lse).exp();
                }
            }
            vec![Tensor::from_parts(x.shape().to_vec(), dx)]
        }
        Prim::Concat { axis } => split_concat_grad(args, *axis, g),
        Prim::Gather { indices } => {
            let x = args[0];
            let w = x.row_len();
            let mut dx = vec![0.0; x.len()];
            for (i, &src) in indices.iter().enumerate() {
                let gr = &g.data()[i * w..(i + 1) * w];
                for (d, v) in dx[src * w..(src + 1) * w].iter_mut().zip(gr) {
                    *d += v;
                }
            }
            vec![Tensor::from_parts(x.shape().to_vec(), dx)]
        }
        Prim::SegmentSum { segments, .. } => {
            let x = args[0];
            let w = x.row_len();
            let mut dx = vec![0.0; x.len()];
            for (i, &s) in segments.iter().enumerate() {
                dx[i * w..(i + 1) * w].copy_from_slice(&g.data()[s * w..(s + 1) * w]);
            }
            vec![Tensor::from_parts(x.shape().to_vec(), dx)]
        }
        Prim::SegmentMax { .. } => {
            let x = args[0];
            let w = x.row_len();
            let arg = aux
                .as_ref()
                .ok_or_else(|| Error::contract("segment max without argmax record"))?;
            let mut dx = vec![0.0; x.len()];
            for (slot, &src_row) in arg.iter().enumerate() {
                if src_row != NO_ARG {
                    let c = slot % w;
                    dx[src_row * w + c] += g.data()[slot];
                }
            }
            vec![Tensor::from_parts(x.shape().to_vec(), dx)]
        }
        Prim::LayerNorm { eps } => {
            let x = args[0];
            let w = x.row_len().max(1);
            let mut dx = vec![0.0; x.len()];
            for (((xr, yr), gr), d) in x
                .data()
                .chunks(w)
                .zip(out.data().chunks(w))
                .zip(g.data().chunks(w))
                .zip(dx.chunks_mut(w))
            {
                let n = w as f64;
                let mean = xr.iter().sum::<f64>() / n;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                let gm = gr.iter().sum::<f64>() / n;
                let gym = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                for i in 0..w {
                    d[i] = inv * (gr[i] - gm - yr[i] * gym);
                }
            }
            vec![Tensor::from_parts(x.shape().to_vec(), dx)]
        }
        Prim::Mean => {
            let x = args[0];
            let v = g.item()? / x.len().max(1) as f64;
            vec![Tensor::full(x.shape().to_vec(), v)]
        }
        Prim::Sum => vec![Tensor::full(args[0].shape().to_vec(), g.item()?)],
        Prim::L2Norm => {
            let x = args[0];
            let nrm = out.item()?;
            let gv = g.item()?;
            if nrm == 0.0 {
                vec![Tensor::zeros(x.shape().to_vec())]
            } else {
                vec![x.scale(gv / nrm)]
            }
        }
        Prim::Transpose => vec![transpose(g)?],
        Prim::Reshape { .. } => vec![g.reshaped(args[0].shape().to_vec())?],
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let lse = logsumexp(row);
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

fn layer_norm_row(row: &[f64], eps: f64, out: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - mean) * inv;
    }
}

fn as_rows(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match x.rank() {
        1 => Ok((1, x.len())),
        2 => Ok((x.shape()[0], x.shape()[1])),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

fn rowwise(x: &Tensor, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor> {
    let (_, c) = as_rows(x, "rowwise")?;
    let mut out = vec![0.0; x.len()];
    if c > 0 {
        for (row, o) in x.data().chunks(c).zip(out.chunks_mut(c)) {
            f(row, o);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `c += a * b` with explicit (row, col) strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_stride: (usize, usize),
    b: &[f64],
    b_stride: (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides and dimensions describe in-bounds views of `a`, `b`
    // and the contiguous `m x n` buffer `c`; all call sites derive them from
    // validated tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_stride.0 as isize,
            a_stride.1 as isize,
            b.as_ptr(),
            b_stride.0 as isize,
            b_stride.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut c);
    Ok(Tensor::from_parts(vec![m, n], c))
}

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Scalar,
    Row(usize),
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.len() == 1 && b.rank() <= 1 {
        Ok(Bcast::Scalar)
    } else if b.rank() == 1 && a.rank() >= 1 && a.shape().last() == Some(&b.len()) {
        Ok(Bcast::Row(b.len()))
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let data = match broadcast_kind(op, a, b)? {
        Bcast::Same => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
        Bcast::Scalar => {
            let y = b.data()[0];
            a.data().iter().map(|&x| f(x, y)).collect()
        }
        Bcast::Row(w) => a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % w]))
            .collect(),
    };
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Sums a full-shape gradient down to the shape of a broadcast operand.
fn reduce_to(g: &Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        return g.clone();
    }
    if target.len() == 1 {
        return Tensor::from_parts(target.shape().to_vec(), vec![g.sum()]);
    }
    let w = target.len();
    let mut acc = vec![0.0; w];
    for (i, v) in g.data().iter().enumerate() {
        acc[i % w] += v;
    }
    Tensor::from_parts(target.shape().to_vec(), acc)
}

fn concat_layout(args: &[&Tensor], axis: usize) -> Result<(usize, Vec<usize>, Vec<usize>)> {
    let first = args[0];
    if axis >= first.rank() {
        return Err(Error::ShapeMismatch {
            op: "concat",
            lhs: first.shape().to_vec(),
            rhs: vec![axis],
        });
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let mut inner = Vec::with_capacity(args.len());
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for t in args {
        let same_rank = t.rank() == first.rank();
        let agree = same_rank
            && t
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !agree {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        out_shape[axis] += t.shape()[axis];
        inner.push(t.shape()[axis..].iter().product());
    }
    Ok((outer, inner, out_shape))
}

fn concat(args: &[&Tensor], axis: usize) -> Result<Tensor> {
    let (outer, inner, out_shape) = concat_layout(args, axis)?;
    let total: usize = inner.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (t, &w) in args.iter().zip(&inner) {
            data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

fn split_concat_grad(args: &[&Tensor], axis: usize, g: &Tensor) -> Vec<Tensor> {
    let (outer, inner, _) = concat_layout(args, axis).expect("validated in forward");
    let total: usize = inner.iter().sum();
    let mut parts: Vec<Vec<f64>> = inner.iter().map(|&w| Vec::with_capacity(w * outer)).collect();
    for o in 0..outer {
        let mut off = o * total;
        for (p, &w) in parts.iter_mut().zip(&inner) {
            p.extend_from_slice(&g.data()[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(args)
        .map(|(p, t)| Tensor::from_parts(t.shape().to_vec(), p))
        .collect()
}

fn gather(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(Error::contract("gather on a rank-0 tensor"));
    }
    let rows = x.rows();
    let w = x.row_len();
    let mut data = Vec::with_capacity(indices.len() * w);
    for &i in indices {
        if i >= rows {
            return Err(Error::contract(format!(
                "gather index {i} out of range for {rows} rows"
            )));
        }
        data.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = indices.len();
    Ok(Tensor::from_parts(shape, data))
}

fn check_segments(x: &Tensor, segments: &[usize], num: usize, op: &'static str) -> Result<()> {
    if x.rank() == 0 || x.rows() != segments.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![segments.len()],
        });
    }
    if let Some(&bad) = segments.iter().find(|&&s| s >= num) {
        return Err(Error::contract(format!(
            "{op}: segment id {bad} >= num_segments {num}"
        )));
    }
    Ok(())
}

fn segment_sum(x: &Tensor, segments: &[usize], num: usize) -> Result<Tensor> {
    check_segments(x, segments, num, "scatter_segment_sum")?;
    let w = x.row_len();
    let mut out = vec![0.0; num * w];
    for (i, &s) in segments.iter().enumerate() {
        for (o, v) in out[s * w..(s + 1) * w]
            .iter_mut()
            .zip(&x.data()[i * w..(i + 1) * w])
        {
            *o += v;
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = num;
    Ok(Tensor::from_parts(shape, out))
}

fn segment_max(x: &Tensor, segments: &[usize], num: usize) -> Result<(Tensor, Vec<usize>)> {
    check_segments(x, segments, num, "scatter_segment_max")?;
    let w = x.row_len();
    let mut out = vec![EMPTY_SEGMENT_FILL; num * w];
    let mut arg = vec![NO_ARG; num * w];
    for (i, &s) in segments.iter().enumerate() {
        for c in 0..w {
            let v = x.data()[i * w + c];
            let slot = s * w + c;
            if arg[slot] == NO_ARG || v > out[slot] {
                out[slot] = v;
                arg[slot] = i;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = num;
    Ok((Tensor::from_parts(shape, out), arg))
}

fn transpose(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "transpose",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = x.data()[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        let m = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(eval(&Prim::MatMul, &[&i2, &m]).unwrap(), m);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        match eval(&Prim::MatMul, &[&a, &b]) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::vector(vec![-1.0, 2.0]);
        assert_eq!(eval(&Prim::Relu, &[&x]).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn segment_max_definition() {
        let v = Tensor::vector(vec![1.0, 5.0, 2.0]);
        let p = Prim::SegmentMax {
            segments: vec![0, 0, 1].into(),
            num_segments: 2,
        };
        assert_eq!(eval(&p, &[&v]).unwrap().data(), &[5.0, 2.0]);
    }

    #[test]
    fn segment_max_empty_segment_uses_fill() {
        let v = Tensor::vector(vec![1.0]);
        let p = Prim::SegmentMax {
            segments: vec![1].into(),
            num_segments: 3,
        };
        assert_eq!(
            eval(&p, &[&v]).unwrap().data(),
            &[EMPTY_SEGMENT_FILL, 1.0, EMPTY_SEGMENT_FILL]
        );
    }

    #[test]
    fn row_broadcast_add() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::vector(vec![10.0, 20.0]);
        let c = eval(&Prim::Add, &[&a, &b]).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 13.0, 24.0]);
        let bad = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(eval(&Prim::Add, &[&a, &bad]).is_err());
    }

    #[test]
    fn leaky_offset_kink() {
        let p = Prim::LeakyReluOffset {
            knee: -6.0,
            slope: 0.01,
        };
        let x = Tensor::vector(vec![-6.0, -5.0, -16.0]);
        let y = eval(&p, &[&x]).unwrap();
        assert_eq!(y.data()[0], -6.0);
        assert_eq!(y.data()[1], -5.0);
        assert!((y.data()[2] - (-6.1)).abs() < 1e-12);
    }

    #[test]
    fn concat_columns_and_rows() {
        let a = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = eval(&Prim::Concat { axis: 1 }, &[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = eval(&Prim::Concat { axis: 0 }, &[&b, &b]).unwrap();
        assert_eq!(r.shape(), &[4, 2]);
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]).unwrap();
        let y = eval(&Prim::LogSoftmaxRows, &[&x]).unwrap();
        for r in 0..2 {
            let s: f64 = y.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
