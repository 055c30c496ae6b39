use rand::Rng;
use rand_distr::StandardNormal;

use super::{Bound, NormKind};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalises node states `h` (`[n, d]`).
///
/// `GranolaLike` computes `LN(h) * (gamma + dg) + beta + db`, where `dg` and
/// `db` come from a one-hidden-layer MLP over `h`, the random node features
/// and the mean node state. Zero output weights reduce it to layer norm.
pub fn normalize(tape: &mut Tape, p: &Bound, h: Var, random: Option<Var>) -> Result<Var> {
    let kind = p.config.norm;
    if kind == NormKind::None {
        return Ok(h);
    }
    let ln = tape.layer_norm(h, LAYER_NORM_EPS)?;
    let gamma = p.var("norm.gamma")?;
    let beta = p.var("norm.beta")?;
    let scaled = tape.mul(ln, gamma)?;
    let mut out = tape.add(scaled, beta)?;
    if kind == NormKind::GranolaLike {
        let r = random.ok_or_else(|| Error::contract("granola_like needs random node features"))?;
        let n = tape.shape(h)[0];
        let pool = tape.constant(Tensor::full(vec![n, n], 1.0 / n as f64));
        let ctx = tape.matmul(pool, h)?;
        let a = tape.matmul(h, p.var("norm.gran.w_h")?)?;
        let b = tape.matmul(r, p.var("norm.gran.w_r")?)?;
        let c = tape.matmul(ctx, p.var("norm.gran.w_ctx")?)?;
        let ab = tape.add(a, b)?;
        let abc = tape.add(ab, c)?;
        let pre = tape.add(abc, p.var("norm.gran.b1")?)?;
        let hidden = tape.relu(pre)?;
        let dg = tape.matmul(hidden, p.var("norm.gran.w_gamma")?)?;
        let dg = tape.add(dg, p.var("norm.gran.b_gamma")?)?;
        let db = tape.matmul(hidden, p.var("norm.gran.w_beta")?)?;
        let db = tape.add(db, p.var("norm.gran.b_beta")?)?;
        let extra = tape.mul(ln, dg)?;
        out = tape.add(out, extra)?;
        out = tape.add(out, db)?;
    }
    Ok(out)
}

/// Standard-normal node features for `GranolaLike`; `None` for other modes.
pub fn random_features<R: Rng + ?Sized>(
    kind: NormKind,
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Option<Tensor> {
    (kind == NormKind::GranolaLike).then(|| {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::from_parts(vec![n, dim], data)
    })
}
