use std::sync::Arc;

use super::norm::normalize;
use super::{Bound, Encoded, GraphView};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Step inputs that depend only on `U`, `E` and the parameters. Computed
/// once per equilibrium solve.
#[derive(Clone, Debug)]
pub struct StepStatic {
    /// Per pass: source/destination `U` terms, edge term and first bias of
    /// the message MLP.
    msg: Vec<Var>,
    /// Per pass: `src * n + dst` of each edge, for triplet lookups.
    pairs: Vec<Arc<[usize]>>,
    upd: Var,
    gate: Var,
    triplet: Option<Var>,
    random: Option<Var>,
}

pub fn prepare(
    tape: &mut Tape,
    p: &Bound,
    view: &GraphView,
    enc: Encoded,
    random: Option<&Tensor>,
) -> Result<StepStatic> {
    let us = tape.matmul(enc.u, p.var("proc.msg.u_src")?)?;
    let ud = tape.matmul(enc.u, p.var("proc.msg.u_dst")?)?;
    let ew = tape.matmul(enc.e, p.var("proc.msg.w_edge")?)?;
    let b1 = p.var("proc.msg.b1")?;
    let mut msg = Vec::with_capacity(view.passes.len());
    let mut pairs = Vec::with_capacity(view.passes.len());
    for pass in &view.passes {
        let a = tape.gather(us, Arc::clone(&pass.src))?;
        let b = tape.gather(ud, Arc::clone(&pass.dst))?;
        let e = tape.gather(ew, Arc::clone(&pass.rows))?;
        let ab = tape.add(a, b)?;
        let abe = tape.add(ab, e)?;
        msg.push(tape.add(abe, b1)?);
        pairs.push(pass.rows.iter().map(|&r| view.pair_index[r]).collect());
    }
    let mlp_static = |tape: &mut Tape, prefix: &str| -> Result<Var> {
        let uw = tape.matmul(enc.u, p.var(&format!("{prefix}.w_u"))?)?;
        tape.add(uw, p.var(&format!("{prefix}.b1"))?)
    };
    let upd = mlp_static(tape, "proc.upd")?;
    let gate = mlp_static(tape, "proc.gate")?;
    let triplet = match &view.triplets {
        None => None,
        Some(idx) => {
            let n2 = view.n_total * view.n_total;
            let dense = tape.segment_sum(enc.e, Arc::clone(&view.pair_index), n2)?;
            let a = tape.matmul(dense, p.var("proc.tri.w_euv")?)?;
            let b = tape.matmul(dense, p.var("proc.tri.w_evw")?)?;
            let ga = tape.gather(a, Arc::clone(&idx.uv))?;
            let gb = tape.gather(b, Arc::clone(&idx.vw))?;
            let s = tape.add(ga, gb)?;
            Some(tape.add(s, p.var("proc.tri.b1")?)?)
        }
    };
    let random = random.map(|r| tape.constant(r.clone()));
    Ok(StepStatic {
        msg,
        pairs,
        upd,
        gate,
        triplet,
        random,
    })
}

/// One processor application `H -> P(H, U, E)`: one gated update per pass.
pub fn step(tape: &mut Tape, p: &Bound, view: &GraphView, st: &StepStatic, h: Var) -> Result<Var> {
    let mut h = h;
    for (i, pass) in view.passes.iter().enumerate() {
        h = pass_step(tape, p, view, st, i, pass.src.clone(), pass.dst.clone(), h)?;
    }
    Ok(h)
}

#[allow(clippy::too_many_arguments)]
fn pass_step(
    tape: &mut Tape,
    p: &Bound,
    view: &GraphView,
    st: &StepStatic,
    pass: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    h: Var,
) -> Result<Var> {
    let n = view.n_total;
    let hs = tape.matmul(h, p.var("proc.msg.w_src")?)?;
    let hd = tape.matmul(h, p.var("proc.msg.w_dst")?)?;
    let gs = tape.gather(hs, src)?;
    let gd = tape.gather(hd, Arc::clone(&dst))?;
    let sum = tape.add(gs, gd)?;
    let mut pre = tape.add(sum, st.msg[pass])?;
    if let Some(tri) = st.triplet {
        let t = triplets(tape, p, view, tri, h)?;
        let te = tape.gather(t, Arc::clone(&st.pairs[pass]))?;
        let tw = tape.matmul(te, p.var("proc.tri.w_out")?)?;
        pre = tape.add(pre, tw)?;
    }
    let msg = mlp_tail(tape, p, "proc.msg", pre)?;
    let agg = tape.segment_max(msg, dst, n)?;

    let upd_pre = node_first_layer(tape, p, "proc.upd", h, agg, st.upd)?;
    let cand = mlp_tail(tape, p, "proc.upd", upd_pre)?;
    let cand = normalize(tape, p, cand, st.random)?;
    let gate_pre = node_first_layer(tape, p, "proc.gate", h, agg, st.gate)?;
    let gate_logit = mlp_tail(tape, p, "proc.gate", gate_pre)?;
    let gate = tape.sigmoid(gate_logit)?;

    let delta = tape.sub(cand, h)?;
    let gated = tape.mul(gate, delta)?;
    tape.add(h, gated)
}

fn node_first_layer(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    h: Var,
    agg: Var,
    fixed: Var,
) -> Result<Var> {
    let a = tape.matmul(h, p.var(&format!("{prefix}.w_h"))?)?;
    let b = tape.matmul(agg, p.var(&format!("{prefix}.w_agg"))?)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, fixed)
}

/// `relu(pre) @ w2 + b2`.
fn mlp_tail(tape: &mut Tape, p: &Bound, prefix: &str, pre: Var) -> Result<Var> {
    let hidden = tape.relu(pre)?;
    let out = tape.matmul(hidden, p.var(&format!("{prefix}.w2"))?)?;
    tape.add(out, p.var(&format!("{prefix}.b2"))?)
}

/// Max over `w` of the triplet MLP on `(h_u, h_v, h_w, e_uv, e_vw)`, one row
/// per ordered pair `(u, v)`.
fn triplets(tape: &mut Tape, p: &Bound, view: &GraphView, fixed: Var, h: Var) -> Result<Var> {
    let idx = view.triplets.as_ref().expect("triplet static implies index");
    let n = view.n_total;
    let a = tape.matmul(h, p.var("proc.tri.w_u")?)?;
    let b = tape.matmul(h, p.var("proc.tri.w_v")?)?;
    let c = tape.matmul(h, p.var("proc.tri.w_w")?)?;
    let ga = tape.gather(a, Arc::clone(&idx.u))?;
    let gb = tape.gather(b, Arc::clone(&idx.v))?;
    let gc = tape.gather(c, Arc::clone(&idx.w))?;
    let ab = tape.add(ga, gb)?;
    let abc = tape.add(ab, gc)?;
    let pre = tape.add(abc, fixed)?;
    let t = mlp_tail(tape, p, "proc.tri", pre)?;
    tape.segment_max(t, Arc::clone(&idx.uv), n * n)
}
