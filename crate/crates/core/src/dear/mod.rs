//! Equilibrium reasoner: the processor iterated to a fixed point, trained by
//! implicit differentiation, plus the unrolled baseline used as a teacher.

pub mod align;
pub mod jacobian;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fixpoint::{residual, solve, SolveConfig, SolveResult};
use crate::model::{
    decode, encode, output_scores, predicted_values, prepare, random_features, step, task_loss,
    Bound, Encoded, GraphView, ModelParams, Predictions, StepStatic,
};
use crate::tasks::GraphInstance;

pub use align::{align, plan, AlignmentPlan};
pub use jacobian::{jacobian_penalty, rademacher, JACOBIAN_EPS};

/// Upper bound on sampled extra steps; the geometric tail beyond it is
/// negligible.
const MAX_EXTRA_STEPS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    pub solver: SolveConfig,
    /// Adjoint tolerance; `solver.tol / 10` when unset.
    pub backward_tol: Option<f64>,
    /// Probability of each further extra step during training; 0 disables.
    pub extra_step_prob: f64,
    pub alignment_weight: f64,
    pub jacobian_weight: f64,
    pub jacobian_eps: f64,
    /// Subsample interior states before aligning.
    pub alignment_subsample: bool,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            solver: SolveConfig::default(),
            backward_tol: None,
            extra_step_prob: 0.5,
            alignment_weight: 0.0,
            jacobian_weight: 0.0,
            jacobian_eps: JACOBIAN_EPS,
            alignment_subsample: true,
        }
    }
}

impl EquilibriumConfig {
    pub fn backward_tol(&self) -> f64 {
        self.backward_tol.unwrap_or(self.solver.tol / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(0.0..1.0).contains(&self.extra_step_prob) {
            return Err(Error::Config("extra_step_prob must lie in [0, 1)".into()));
        }
        if !(self.backward_tol() > 0.0) {
            return Err(Error::Config("backward_tol must be positive".into()));
        }
        if self.alignment_weight < 0.0 || self.jacobian_weight < 0.0 {
            return Err(Error::Config("regulariser weights must be non-negative".into()));
        }
        if !(self.jacobian_eps > 0.0) {
            return Err(Error::Config("jacobian_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Number of extra steps `s` with `P(s) = (1 - q) q^s`.
pub fn sample_extra_steps(q: f64, rng: &mut dyn RngCore) -> usize {
    let mut s = 0;
    while s < MAX_EXTRA_STEPS && rng.random::<f64>() < q {
        s += 1;
    }
    s
}

/// A tape with parameters bound and the step-invariant inputs recorded.
pub struct Session<'v> {
    pub tape: Tape,
    pub bound: Bound,
    pub enc: Encoded,
    pub view: &'v GraphView,
    st: StepStatic,
}

impl<'v> Session<'v> {
    pub fn open(
        params: &ModelParams,
        view: &'v GraphView,
        instance: &GraphInstance,
        random: Option<&Tensor>,
        trainable: bool,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, trainable);
        let enc = encode(&mut tape, &bound, view, instance)?;
        let st = prepare(&mut tape, &bound, view, enc, random)?;
        Ok(Session {
            tape,
            bound,
            enc,
            view,
            st,
        })
    }

    pub fn step(&mut self, h: Var) -> Result<Var> {
        step(&mut self.tape, &self.bound, self.view, &self.st, h)
    }

    /// `P(h)` without keeping anything on the tape.
    pub fn apply(&mut self, h: &Tensor) -> Result<Tensor> {
        let mark = self.tape.len();
        let hv = self.tape.constant(h.clone());
        let out = self.step(hv)?;
        let value = self.tape.value(out).clone();
        self.tape.truncate(mark);
        Ok(value)
    }

    pub fn decode(&mut self, instance: &GraphInstance, h: Var) -> Result<Predictions> {
        decode(&mut self.tape, &self.bound, self.view, instance, h, self.enc)
    }

    pub fn latent_shape(&self) -> [usize; 2] {
        [self.view.n_total, self.bound.config.latent_dim]
    }
}

/// Graph view and per-solve random node features for one instance.
pub struct Prepared {
    pub view: GraphView,
    pub random: Option<Tensor>,
}

pub fn prepare_instance(
    params: &ModelParams,
    instance: &GraphInstance,
    rng: &mut dyn RngCore,
) -> Result<Prepared> {
    let view = GraphView::new(instance, &params.config)?;
    let random = random_features(
        params.config.norm,
        view.n_total,
        params.config.granola_random_dim,
        rng,
    );
    Ok(Prepared { view, random })
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    /// Returned state, after any extra steps.
    pub state: Tensor,
    pub solve: SolveResult,
    pub extra_steps: usize,
    /// States `H(1)..H(T)` ending at `state`; only when the solver recorded
    /// its trajectory. The zero state is excluded unless it is the answer.
    pub states: Vec<Tensor>,
}

/// Solves `H = P(H, U, E)` from `H = 0` and applies `extra` more steps.
pub fn equilibrium_forward(
    session: &mut Session<'_>,
    cfg: &SolveConfig,
    extra: usize,
) -> Result<Equilibrium> {
    let shape = session.latent_shape();
    let z0 = vec![0.0; shape[0] * shape[1]];
    let result = solve(
        |x| {
            let h = Tensor::new(shape.to_vec(), x.to_vec())?;
            Ok(session.apply(&h)?.to_vec())
        },
        &z0,
        cfg,
    )?;
    let mut state = Tensor::new(shape.to_vec(), result.state.clone())?;
    let mut states: Vec<Tensor> = match result.path_to_fixed() {
        Some(path) => path[1..]
            .iter()
            .map(|x| Tensor::new(shape.to_vec(), x.clone()))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    for _ in 0..extra {
        state = session.apply(&state)?;
        if cfg.record_trajectory {
            states.push(state.clone());
        }
    }
    if cfg.record_trajectory && states.is_empty() {
        states.push(state.clone());
    }
    Ok(Equilibrium {
        state,
        solve: result,
        extra_steps: extra,
        states,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub task: f64,
    pub align: f64,
    pub jacobian: f64,
}

/// Per-instance training result.
#[derive(Clone, Debug)]
pub struct GradOutcome {
    pub losses: Losses,
    /// One gradient per parameter, in parameter order.
    pub grads: Vec<Tensor>,
    pub steps: usize,
    pub converged: bool,
    pub adjoint_converged: bool,
}

fn collect_grads(session: &Session<'_>, grads: &crate::autodiff::Gradients, params: &ModelParams) -> Vec<Tensor> {
    session
        .bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect()
}

/// Loss gradients through the equilibrium by implicit differentiation.
///
/// `teacher` holds the frozen baseline's states `H_G(1)..H_G(T_G)` for the
/// alignment term, which is skipped when absent or weighted 0.
pub fn dear_gradients(
    params: &ModelParams,
    instance: &GraphInstance,
    cfg: &EquilibriumConfig,
    rng: &mut dyn RngCore,
    teacher: Option<&[Tensor]>,
) -> Result<GradOutcome> {
    let prep = prepare_instance(params, instance, rng)?;
    let random = prep.random.as_ref();
    let use_align = cfg.alignment_weight > 0.0 && teacher.is_some_and(|t| !t.is_empty());
    let mut solver = cfg.solver.clone();
    solver.record_trajectory |= use_align;

    let extra = sample_extra_steps(cfg.extra_step_prob, rng);
    let eq = {
        let mut s = Session::open(params, &prep.view, instance, random, false)?;
        equilibrium_forward(&mut s, &solver, extra)?
    };
    let h_star = eq.state.clone();

    let mut s1 = Session::open(params, &prep.view, instance, random, true)?;
    let hc = s1.tape.constant(h_star.clone());
    let y1 = s1.step(hc)?;
    let hleaf = s1.tape.var(h_star.clone());
    let preds = s1.decode(instance, hleaf)?;
    let task = task_loss(&mut s1.tape, &preds, instance)?;
    let mut total = task;
    let mut losses = Losses {
        task: s1.tape.value(task).item()?,
        ..Losses::default()
    };

    if use_align {
        let teacher = teacher.expect("checked above");
        let a = alignment_term(&mut s1, &eq.states, hleaf, teacher, cfg.alignment_subsample, rng)?;
        losses.align = s1.tape.value(a).item()?;
        let w = s1.tape.scale(a, cfg.alignment_weight)?;
        total = s1.tape.add(total, w)?;
    }
    if cfg.jacobian_weight > 0.0 {
        let v = rademacher(&h_star, rng);
        let pen = {
            let Session {
                tape,
                bound,
                view,
                st,
                ..
            } = &mut s1;
            jacobian_penalty(tape, &h_star, &v, cfg.jacobian_eps, &mut |t, h| {
                step(t, bound, view, st, h)
            })?
        };
        losses.jacobian = s1.tape.value(pen).item()?;
        let w = s1.tape.scale(pen, cfg.jacobian_weight)?;
        total = s1.tape.add(total, w)?;
    }

    let first = s1.tape.backward(total)?;
    let g = first.get_or_zeros(hleaf, &h_star);

    let (u, adjoint_converged) = adjoint(params, &prep.view, instance, random, &h_star, &g, cfg)?;

    let seed_one = Tensor::full(s1.tape.shape(total).to_vec(), 1.0);
    let grads = s1.tape.backward_from(&[(total, seed_one), (y1, u)])?;
    Ok(GradOutcome {
        losses,
        grads: collect_grads(&s1, &grads, params),
        steps: eq.solve.steps,
        converged: eq.solve.converged,
        adjoint_converged,
    })
}

/// Solves `u = g + Jᵀu` with `J = ∂P/∂H` at `h_star`, starting from `g`.
fn adjoint(
    params: &ModelParams,
    view: &GraphView,
    instance: &GraphInstance,
    random: Option<&Tensor>,
    h_star: &Tensor,
    g: &Tensor,
    cfg: &EquilibriumConfig,
) -> Result<(Tensor, bool)> {
    if g.data().iter().all(|&x| x == 0.0) {
        return Ok((g.clone(), true));
    }
    let mut s2 = Session::open(params, view, instance, random, false)?;
    let hv = s2.tape.var(h_star.clone());
    let y2 = s2.step(hv)?;
    let shape = h_star.shape().to_vec();
    let mut solver = cfg.solver.clone();
    solver.tol = cfg.backward_tol();
    solver.record_trajectory = false;
    let result = solve(
        |u| {
            let ut = Tensor::new(shape.clone(), u.to_vec())?;
            let grads = s2.tape.backward_from(&[(y2, ut)])?;
            let jtu = grads.get_or_zeros(hv, h_star);
            Ok(jtu.data().iter().zip(g.data()).map(|(a, b)| a + b).collect())
        },
        g.data(),
        &solver,
    )?;
    Ok((Tensor::new(shape, result.state)?, result.converged))
}

/// Alignment loss recorded on the training tape. Interior solver states are
/// re-derived as one processor step from the detached previous state; the
/// last state is the decoded leaf.
fn alignment_term(
    s1: &mut Session<'_>,
    states: &[Tensor],
    last: Var,
    teacher: &[Tensor],
    subsample: bool,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let t = states.len();
    let t_g = teacher.len();
    for g in teacher {
        if g.shape() != states[0].shape() {
            return Err(Error::ShapeMismatch {
                op: "alignment",
                lhs: states[0].shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    let dist = |i: usize, j: usize| -> f64 {
        states[i]
            .data()
            .iter()
            .zip(teacher[j].data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let plan = plan(t, t_g, &dist, if subsample { Some(rng) } else { None });
    let tape_dist = |s1: &mut Session<'_>, sv: Var, j: usize| -> Result<Var> {
        let gt = s1.tape.constant(teacher[j].clone());
        let diff = s1.tape.sub(sv, gt)?;
        s1.tape.l2_norm(diff)
    };
    let mut loss = tape_dist(s1, last, t_g - 1)?;
    if plan.normaliser > 0 {
        let mut interior: Option<Var> = None;
        for &(i, j) in &plan.interior {
            let prev = if i == 0 {
                Tensor::zeros(states[0].shape().to_vec())
            } else {
                states[i - 1].clone()
            };
            let pv = s1.tape.constant(prev);
            let si = s1.step(pv)?;
            let d = tape_dist(s1, si, j)?;
            interior = Some(match interior {
                None => d,
                Some(acc) => s1.tape.add(acc, d)?,
            });
        }
        if let Some(sum) = interior {
            let scaled = s1.tape.scale(sum, 1.0 / plan.normaliser as f64)?;
            loss = s1.tape.add(loss, scaled)?;
        }
    }
    Ok(loss)
}

/// Result of running the unrolled baseline.
pub struct Unrolled<'v> {
    pub session: Session<'v>,
    pub predictions: Predictions,
    /// `H(0)..H(steps)` as values.
    pub trajectory: Vec<Tensor>,
    pub last: Var,
}

/// Applies the processor `steps` times from `H = 0` and decodes.
pub fn unrolled_forward<'v>(
    params: &ModelParams,
    view: &'v GraphView,
    instance: &GraphInstance,
    random: Option<&Tensor>,
    steps: usize,
    trainable: bool,
) -> Result<Unrolled<'v>> {
    if steps == 0 {
        return Err(Error::contract("unrolled forward needs at least one step"));
    }
    let mut session = Session::open(params, view, instance, random, trainable)?;
    let shape = session.latent_shape();
    let mut h = session.tape.constant(Tensor::zeros(shape.to_vec()));
    let mut trajectory = vec![session.tape.value(h).clone()];
    for _ in 0..steps {
        h = session.step(h)?;
        trajectory.push(session.tape.value(h).clone());
    }
    let predictions = session.decode(instance, h)?;
    Ok(Unrolled {
        session,
        predictions,
        trajectory,
        last: h,
    })
}

/// Gradients of the task loss by backpropagating through `steps` unrolled
/// processor applications.
pub fn unrolled_gradients(
    params: &ModelParams,
    instance: &GraphInstance,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<GradOutcome> {
    let prep = prepare_instance(params, instance, rng)?;
    let mut u = unrolled_forward(params, &prep.view, instance, prep.random.as_ref(), steps, true)?;
    let loss = task_loss(&mut u.session.tape, &u.predictions, instance)?;
    let task = u.session.tape.value(loss).item()?;
    let grads = u.session.tape.backward(loss)?;
    Ok(GradOutcome {
        losses: Losses {
            task,
            ..Losses::default()
        },
        grads: collect_grads(&u.session, &grads, params),
        steps,
        converged: true,
        adjoint_converged: true,
    })
}

/// Teacher states `H_G(1)..H_G(steps)` of a frozen unrolled model.
pub fn teacher_states(
    teacher: &ModelParams,
    instance: &GraphInstance,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Tensor>> {
    let prep = prepare_instance(teacher, instance, rng)?;
    let u = unrolled_forward(teacher, &prep.view, instance, prep.random.as_ref(), steps, false)?;
    Ok(u.trajectory[1..].to_vec())
}

/// Per-instance evaluation result.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub task_loss: f64,
    /// Mean of the per-output scores.
    pub score: f64,
    pub output_scores: Vec<(String, f64)>,
    pub steps: usize,
    pub converged: bool,
    /// Relative change of the returned state under one more processor step.
    pub stability: f64,
    /// Hard predictions per output feature.
    pub predictions: Vec<(String, Vec<f64>)>,
}

fn score_predictions(
    session: &mut Session<'_>,
    preds: &Predictions,
    instance: &GraphInstance,
) -> Result<(f64, f64, Vec<(String, f64)>, Vec<(String, Vec<f64>)>)> {
    let loss = task_loss(&mut session.tape, preds, instance)?;
    let loss = session.tape.value(loss).item()?;
    let scores = output_scores(&session.tape, preds, instance)?;
    let score = scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len().max(1) as f64;
    let values = preds
        .items
        .iter()
        .map(|p| (p.spec.name.clone(), predicted_values(&session.tape, p)))
        .collect();
    Ok((loss, score, scores, values))
}

/// Solves to equilibrium without extra steps and scores the decoded outputs.
/// A converged solve whose state moves by `tol` or more under one more step
/// violates the solver contract and is reported as an error.
pub fn evaluate_dear(
    params: &ModelParams,
    instance: &GraphInstance,
    cfg: &EquilibriumConfig,
    rng: &mut dyn RngCore,
) -> Result<EvalOutcome> {
    let prep = prepare_instance(params, instance, rng)?;
    let mut s = Session::open(params, &prep.view, instance, prep.random.as_ref(), false)?;
    let mut solver = cfg.solver.clone();
    solver.record_trajectory = false;
    let eq = equilibrium_forward(&mut s, &solver, 0)?;
    let next = s.apply(&eq.state)?;
    let stability = residual(eq.state.data(), next.data())?;
    if eq.solve.converged && stability >= solver.tol {
        return Err(Error::Solver {
            steps: eq.solve.steps,
            reason: format!("returned state moves by {stability} under one more step"),
            last_finite: eq.state.to_vec(),
        });
    }
    let h = s.tape.constant(eq.state.clone());
    let preds = s.decode(instance, h)?;
    let (task_loss, score, output_scores, predictions) = score_predictions(&mut s, &preds, instance)?;
    Ok(EvalOutcome {
        task_loss,
        score,
        output_scores,
        steps: eq.solve.steps,
        converged: eq.solve.converged,
        stability,
        predictions,
    })
}

/// Scores the unrolled baseline after `steps` processor applications.
pub fn evaluate_unrolled(
    params: &ModelParams,
    instance: &GraphInstance,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalOutcome> {
    let prep = prepare_instance(params, instance, rng)?;
    let mut u = unrolled_forward(params, &prep.view, instance, prep.random.as_ref(), steps, false)?;
    let (task_loss, score, output_scores, predictions) =
        score_predictions(&mut u.session, &u.predictions, instance)?;
    Ok(EvalOutcome {
        task_loss,
        score,
        output_scores,
        steps,
        converged: true,
        stability: 0.0,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extra_steps_disabled_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| sample_extra_steps(0.0, &mut rng) == 0));
    }

    #[test]
    fn default_backward_tol_is_a_tenth() {
        let cfg = EquilibriumConfig::default();
        assert!((cfg.backward_tol() - cfg.solver.tol / 10.0).abs() < 1e-15);
        cfg.validate().unwrap();
    }
}
