use std::sync::Arc;

use super::{Bound, Encoded, GraphView};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::tasks::{oracle, DType, FeatureSpec, GraphInstance, Location};

/// Kink of the activation applied after Sinkhorn normalisation.
pub const SINKHORN_KNEE: f64 = -6.0;
pub const SINKHORN_SLOPE: f64 = 0.01;

const DIAGONAL_MASK: f64 = -1e9;

#[derive(Clone, Copy, Debug)]
pub enum PredKind {
    /// Log-probabilities `[rows, k]`, one categorical per row.
    LogProbs,
    /// Binary logits, one per element.
    MaskLogits,
    Scalar,
    /// Row `v` of `var` is the log-distribution over the cyclic predecessor
    /// of `v`; `head` (`[1, n]`) locates the first element.
    Permutation { head: Var },
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub spec: FeatureSpec,
    pub var: Var,
    pub kind: PredKind,
}

#[derive(Clone, Debug)]
pub struct Predictions {
    pub items: Vec<Prediction>,
}

/// Decodes every output feature from `z = [H | U]` restricted to base nodes
/// and instance edges.
pub fn decode(
    tape: &mut Tape,
    p: &Bound,
    view: &GraphView,
    instance: &GraphInstance,
    h: Var,
    enc: Encoded,
) -> Result<Predictions> {
    let (n, m) = (view.n_base, view.m_base);
    let mut z = tape.concat(&[h, enc.u], 1)?;
    let mut e = enc.e;
    if view.n_total > n {
        z = tape.gather(z, (0..n).collect::<Vec<_>>())?;
    }
    if view.num_edges() > m {
        e = tape.gather(e, (0..m).collect::<Vec<_>>())?;
    }
    let src: Arc<[usize]> = instance.edges.iter().map(|&(s, _)| s).collect();
    let dst: Arc<[usize]> = instance.edges.iter().map(|&(_, d)| d).collect();
    let pairs: Arc<[usize]> = instance.edges.iter().map(|&(s, d)| s * n + d).collect();

    let mut items = Vec::new();
    for spec in instance.algorithm.output_specs() {
        let pre = format!("dec.{}", spec.name);
        let pv = |name: &str| p.var(&format!("{pre}.{name}"));
        let (var, kind) = match (spec.location, spec.dtype) {
            (Location::Node, DType::Scalar | DType::Mask | DType::MaskOne | DType::Categorical(_)) => {
                let zw = tape.matmul(z, pv("w")?)?;
                let logits = tape.add(zw, pv("b")?)?;
                match spec.dtype {
                    DType::Scalar => (tape.reshape(logits, vec![n])?, PredKind::Scalar),
                    DType::Mask => (tape.reshape(logits, vec![n])?, PredKind::MaskLogits),
                    DType::MaskOne => {
                        let row = tape.reshape(logits, vec![1, n])?;
                        (tape.log_softmax_rows(row)?, PredKind::LogProbs)
                    }
                    _ => (tape.log_softmax_rows(logits)?, PredKind::LogProbs),
                }
            }
            (Location::Node, DType::Pointer) => {
                let a = tape.matmul(z, pv("w_src")?)?;
                let b = tape.matmul(z, pv("w_dst")?)?;
                let ga = tape.gather(a, Arc::clone(&src))?;
                let gb = tape.gather(b, Arc::clone(&dst))?;
                let ew = tape.matmul(e, pv("w_edge")?)?;
                let s = tape.add(ga, gb)?;
                let s = tape.add(s, ew)?;
                let s = tape.add(s, pv("b1")?)?;
                let hidden = tape.relu(s)?;
                let scores = tape.matmul(hidden, pv("w2")?)?;
                // Missing edges fall back to the empty-segment fill and get
                // zero probability.
                let dense = tape.segment_max(scores, Arc::clone(&pairs), n * n)?;
                let dense = tape.reshape(dense, vec![n, n])?;
                (tape.log_softmax_rows(dense)?, PredKind::LogProbs)
            }
            (Location::Edge, DType::Pointer) => {
                (edge_pointer(tape, &pv, instance, z, e)?, PredKind::LogProbs)
            }
            (Location::Node, DType::PermutationPointer) => {
                let a = tape.matmul(z, pv("w_src")?)?;
                let b = tape.matmul(z, pv("w_dst")?)?;
                let ii: Vec<usize> = (0..n * n).map(|k| k / n).collect();
                let jj: Vec<usize> = (0..n * n).map(|k| k % n).collect();
                let ga = tape.gather(a, ii)?;
                let gb = tape.gather(b, jj)?;
                let dense_e = tape.segment_sum(e, Arc::clone(&pairs), n * n)?;
                let ew = tape.matmul(dense_e, pv("w_edge")?)?;
                let s = tape.add(ga, gb)?;
                let s = tape.add(s, ew)?;
                let s = tape.add(s, pv("b1")?)?;
                let hidden = tape.relu(s)?;
                let scores = tape.matmul(hidden, pv("w2")?)?;
                let logits = tape.reshape(scores, vec![n, n])?;
                let perm = sinkhorn_permute(
                    tape,
                    logits,
                    p.config.sinkhorn_iters,
                    p.config.sinkhorn_temperature,
                    true,
                )?;
                let perm = tape.log_softmax_rows(perm)?;
                let hw = tape.matmul(z, pv("head_w")?)?;
                let hl = tape.add(hw, pv("head_b")?)?;
                let hl = tape.reshape(hl, vec![1, n])?;
                let head = tape.log_softmax_rows(hl)?;
                (perm, PredKind::Permutation { head })
            }
            (loc, dt) => {
                return Err(Error::Capability(format!(
                    "no decoder for {dt} outputs located at {loc:?}"
                )))
            }
        };
        items.push(Prediction { spec, var, kind });
    }
    Ok(Predictions { items })
}

/// Log-distribution over `k` for every edge `(i, j)` of a dense graph:
/// the node preceding `j` on the path from `i`.
fn edge_pointer(
    tape: &mut Tape,
    pv: &dyn Fn(&str) -> Result<Var>,
    instance: &GraphInstance,
    z: Var,
    e: Var,
) -> Result<Var> {
    let n = instance.n;
    let dense = instance.edges.len() == n * n
        && instance
            .edges
            .iter()
            .enumerate()
            .all(|(i, &(s, d))| s == i / n && d == i % n);
    if !dense {
        return Err(Error::Capability(
            "edge pointers need a dense row-major edge list".into(),
        ));
    }
    let total = n * n * n;
    let (mut ii, mut jj, mut kk, mut eij, mut ekj) = (
        Vec::with_capacity(total),
        Vec::with_capacity(total),
        Vec::with_capacity(total),
        Vec::with_capacity(total),
        Vec::with_capacity(total),
    );
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                ii.push(i);
                jj.push(j);
                kk.push(k);
                eij.push(i * n + j);
                ekj.push(k * n + j);
            }
        }
    }
    let a = tape.matmul(z, pv("w_i")?)?;
    let b = tape.matmul(z, pv("w_j")?)?;
    let c = tape.matmul(z, pv("w_k")?)?;
    let ea = tape.matmul(e, pv("w_eij")?)?;
    let eb = tape.matmul(e, pv("w_ekj")?)?;
    let parts = [
        tape.gather(a, ii)?,
        tape.gather(b, jj)?,
        tape.gather(c, kk)?,
        tape.gather(ea, eij)?,
        tape.gather(eb, ekj)?,
    ];
    let mut s = parts[0];
    for &q in &parts[1..] {
        s = tape.add(s, q)?;
    }
    let s = tape.add(s, pv("b1")?)?;
    let hidden = tape.relu(s)?;
    let scores = tape.matmul(hidden, pv("w2")?)?;
    let scores = tape.reshape(scores, vec![n * n, n])?;
    tape.log_softmax_rows(scores)
}

/// [`sinkhorn_log`] followed by the off-centred leaky ReLU, which keeps
/// every log-score at or above roughly the knee.
pub fn sinkhorn_permute(
    tape: &mut Tape,
    logits: Var,
    iters: usize,
    temp: f64,
    mask_diagonal: bool,
) -> Result<Var> {
    let x = sinkhorn_log(tape, logits, iters, temp, mask_diagonal)?;
    tape.leaky_relu_offset(x, SINKHORN_KNEE, SINKHORN_SLOPE)
}

/// Log-space Sinkhorn normalisation of square `logits / temp`, rows then
/// columns per round. With `mask_diagonal` the diagonal is excluded from the
/// support.
pub fn sinkhorn_log(
    tape: &mut Tape,
    logits: Var,
    iters: usize,
    temp: f64,
    mask_diagonal: bool,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::ShapeMismatch {
            op: "sinkhorn_permute",
            lhs: shape,
            rhs: vec![],
        });
    }
    if iters == 0 || !(temp > 0.0) {
        return Err(Error::contract("sinkhorn needs iters >= 1 and temp > 0"));
    }
    let n = shape[0];
    let mut x = tape.scale(logits, 1.0 / temp)?;
    if mask_diagonal {
        let mut mask = vec![0.0; n * n];
        for i in 0..n {
            mask[i * n + i] = DIAGONAL_MASK;
        }
        let mask = tape.constant(Tensor::new(vec![n, n], mask)?);
        x = tape.add(x, mask)?;
    }
    for _ in 0..iters {
        let row_lse = tape.logsumexp_rows(x)?;
        let xt = tape.transpose(x)?;
        let xt = tape.sub(xt, row_lse)?;
        let col_lse = tape.logsumexp_rows(xt)?;
        let back = tape.transpose(xt)?;
        x = tape.sub(back, col_lse)?;
    }
    Ok(x)
}

/// Target row index per prediction row, for categorical-style outputs.
fn targets(spec: &FeatureSpec, instance: &GraphInstance) -> Result<Vec<usize>> {
    let f = instance.feature(&spec.name)?;
    Ok(match spec.dtype {
        DType::Pointer => f.indices(),
        DType::MaskOne => vec![f.values.iter().position(|&v| v == 1.0).unwrap_or(0)],
        DType::Categorical(k) => f
            .values
            .chunks(k)
            .map(|c| c.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect(),
        DType::PermutationPointer => cyclic_predecessors(&f.indices())?,
        DType::Scalar | DType::Mask => {
            return Err(Error::contract(format!("`{}` has no class targets", spec.name)))
        }
    })
}

/// Replaces the head's self-pointer by a pointer to the last element, so the
/// predecessor relation becomes a fixed-point-free permutation.
pub fn cyclic_predecessors(pred: &[usize]) -> Result<Vec<usize>> {
    let order = oracle::order_from_predecessors(pred)?;
    let mut cyc = pred.to_vec();
    cyc[order[0]] = *order.last().expect("non-empty order");
    Ok(cyc)
}

fn head_of(pred: &[usize]) -> usize {
    (0..pred.len()).find(|&v| pred[v] == v).unwrap_or(0)
}

/// Mean negative log-likelihood of `targets` under log-probability rows.
fn cross_entropy(tape: &mut Tape, logp: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(logp).to_vec();
    let (rows, k) = (shape[0], shape[1]);
    if targets.len() != rows {
        return Err(Error::contract(format!(
            "{} targets for {rows} prediction rows",
            targets.len()
        )));
    }
    let flat = tape.reshape(logp, vec![rows * k, 1])?;
    let idx: Vec<usize> = targets.iter().enumerate().map(|(r, &t)| r * k + t).collect();
    let picked = tape.gather(flat, idx)?;
    let mean = tape.mean(picked)?;
    tape.scale(mean, -1.0)
}

/// Sum over output features of each feature's mean per-element loss.
pub fn task_loss(tape: &mut Tape, preds: &Predictions, instance: &GraphInstance) -> Result<Var> {
    let mut total: Option<Var> = None;
    for pred in &preds.items {
        let loss = match pred.kind {
            PredKind::LogProbs => {
                let t = targets(&pred.spec, instance)?;
                cross_entropy(tape, pred.var, &t)?
            }
            PredKind::MaskLogits => {
                let y = instance.feature(&pred.spec.name)?.values.clone();
                let y = tape.constant(Tensor::vector(y));
                let sp = tape.softplus(pred.var)?;
                let xy = tape.mul(pred.var, y)?;
                let l = tape.sub(sp, xy)?;
                tape.mean(l)?
            }
            PredKind::Scalar => {
                let y = instance.feature(&pred.spec.name)?.values.clone();
                let y = tape.constant(Tensor::vector(y));
                let diff = tape.sub(pred.var, y)?;
                let sq = tape.mul(diff, diff)?;
                tape.mean(sq)?
            }
            PredKind::Permutation { head } => {
                let t = targets(&pred.spec, instance)?;
                let rows = cross_entropy(tape, pred.var, &t)?;
                let h = head_of(&instance.feature(&pred.spec.name)?.indices());
                let head_loss = cross_entropy(tape, head, &[h])?;
                tape.add(rows, head_loss)?
            }
        };
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    total.ok_or_else(|| Error::contract("algorithm has no outputs"))
}

/// Hard predictions in the dataset encoding of each output feature.
pub fn predicted_values(tape: &Tape, pred: &Prediction) -> Vec<f64> {
    let v = tape.value(pred.var);
    match pred.kind {
        PredKind::LogProbs => match pred.spec.dtype {
            DType::MaskOne => {
                let mut out = vec![0.0; v.row_len()];
                out[v.argmax_rows()[0]] = 1.0;
                out
            }
            DType::Categorical(k) => v
                .argmax_rows()
                .into_iter()
                .flat_map(|a| (0..k).map(move |c| f64::from(u8::from(c == a))))
                .collect(),
            _ => v.argmax_rows().into_iter().map(|a| a as f64).collect(),
        },
        PredKind::MaskLogits => v.data().iter().map(|&x| f64::from(u8::from(x > 0.0))).collect(),
        PredKind::Scalar => v.to_vec(),
        PredKind::Permutation { head } => {
            let head = tape.value(head).argmax_rows()[0];
            let mut pred: Vec<f64> = v.argmax_rows().into_iter().map(|a| a as f64).collect();
            pred[head] = head as f64;
            pred
        }
    }
}

/// Per-output score: exact-match mean for index-valued outputs, F1 for
/// masks, negated mean squared error for scalars.
pub fn output_scores(
    tape: &Tape,
    preds: &Predictions,
    instance: &GraphInstance,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for pred in &preds.items {
        let truth = &instance.feature(&pred.spec.name)?.values;
        let guess = predicted_values(tape, pred);
        let score = match pred.spec.dtype {
            DType::Mask => f1(&guess, truth),
            DType::Scalar => {
                -guess.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                    / truth.len().max(1) as f64
            }
            DType::MaskOne => f64::from(u8::from(guess == *truth)),
            DType::Categorical(k) => {
                let rows = truth.len() / k;
                let hits = guess
                    .chunks(k)
                    .zip(truth.chunks(k))
                    .filter(|(a, b)| a == b)
                    .count();
                hits as f64 / rows.max(1) as f64
            }
            DType::Pointer | DType::PermutationPointer => {
                let hits = guess.iter().zip(truth).filter(|(a, b)| a == b).count();
                hits as f64 / truth.len().max(1) as f64
            }
        };
        out.push((pred.spec.name.clone(), score));
    }
    Ok(out)
}

/// Mean of [`output_scores`].
pub fn instance_score(tape: &Tape, preds: &Predictions, instance: &GraphInstance) -> Result<f64> {
    let scores = output_scores(tape, preds, instance)?;
    Ok(scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len().max(1) as f64)
}

/// F1 of the positive class; empty positive sets on both sides score 1.
pub fn f1(pred: &[f64], truth: &[f64]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1.0, t == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 1.0 };
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}
