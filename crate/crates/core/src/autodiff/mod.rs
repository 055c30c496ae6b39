//! Minimal reverse-mode automatic differentiation over dense f64 tensors.

mod ops;
mod tape;
mod tensor;

pub use ops::{eval, Prim, EMPTY_SEGMENT_FILL};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Vector-Jacobian product `uᵀ · ∂f/∂z`, shaped like `z`.
pub fn vjp<F>(f: F, z: &Tensor, u: &Tensor) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let zv = tape.var(z.clone());
    let y = f(&mut tape, zv)?;
    if tape.shape(y) != u.shape() {
        return Err(Error::ShapeMismatch {
            op: "vjp",
            lhs: tape.shape(y).to_vec(),
            rhs: u.shape().to_vec(),
        });
    }
    let grads = tape.backward_from(&[(y, u.clone())])?;
    Ok(grads.get_or_zeros(zv, z))
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences with step `eps`.
///
/// Returns `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖)` over the
/// whole gradient, or 0 when both vanish. A non-finite function value or
/// gradient yields `f64::INFINITY`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval_at = |t: &Tensor| -> Option<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v).ok()?;
        tape.value(out).item().ok().filter(|y| y.is_finite())
    };

    let analytic = {
        let mut tape = Tape::new();
        let v = tape.var(x.clone());
        let Ok(out) = f(&mut tape, v) else {
            return f64::INFINITY;
        };
        if !tape.value(out).item().is_ok_and(f64::is_finite) {
            return f64::INFINITY;
        }
        match tape.backward(out) {
            Ok(g) => g.get_or_zeros(v, x),
            Err(_) => return f64::INFINITY,
        }
    };

    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = eval_at(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = orig - eps;
        let minus = eval_at(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = orig;
        let (Some(p), Some(m)) = (plus, minus) else {
            return f64::INFINITY;
        };
        numeric.push((p - m) / (2.0 * eps));
    }
    if !analytic.all_finite() {
        return f64::INFINITY;
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.data().iter().zip(&numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.data().iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
