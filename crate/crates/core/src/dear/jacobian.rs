use rand::{Rng, RngCore};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Default finite-difference step for the Jacobian probe.
pub const JACOBIAN_EPS: f64 = 1e-3;

/// Vector of independent ±1 entries shaped like `like`.
pub fn rademacher(like: &Tensor, rng: &mut dyn RngCore) -> Tensor {
    let data: Vec<f64> = (0..like.len())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(like.shape().to_vec(), data).expect("same element count")
}

/// One-probe estimate of `‖J v‖²` at `h` using a centred difference of
/// `step`, which records `f` on `tape`. Only the two perturbed applications
/// are differentiated; `h` itself is held constant.
pub fn jacobian_penalty(
    tape: &mut Tape,
    h: &Tensor,
    v: &Tensor,
    eps: f64,
    step: &mut dyn FnMut(&mut Tape, Var) -> Result<Var>,
) -> Result<Var> {
    let plus = tape.constant(h.zip_map(v, |a, b| a + eps * b)?);
    let minus = tape.constant(h.zip_map(v, |a, b| a - eps * b)?);
    let fp = step(tape, plus)?;
    let fm = step(tape, minus)?;
    let diff = tape.sub(fp, fm)?;
    let jv = tape.scale(diff, 0.5 / eps)?;
    let sq = tape.mul(jv, jv)?;
    tape.sum(sq)
}
