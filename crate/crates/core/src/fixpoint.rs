//! Black-box fixed-point solvers over flat state vectors.
//!
//! Both solvers stop at the *first* iterate whose update residual falls under
//! the tolerance, rather than the iterate with the smallest residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive guard in the relative residual denominator.
const RESIDUAL_GUARD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    FixedPoint,
    Anderson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub method: SolverMethod,
    pub tol: f64,
    pub max_iters: usize,
    pub anderson_memory: usize,
    pub anderson_beta: f64,
    /// Relative Tikhonov ridge for the Anderson least-squares problem.
    pub anderson_ridge: f64,
    pub record_trajectory: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            method: SolverMethod::Anderson,
            tol: 0.1,
            max_iters: 64,
            anderson_memory: 5,
            anderson_beta: 1.0,
            anderson_ridge: 1e-4,
            record_trajectory: false,
        }
    }
}

impl SolveConfig {
    pub fn fixed_point(tol: f64, max_iters: usize) -> Self {
        SolveConfig {
            method: SolverMethod::FixedPoint,
            tol,
            max_iters,
            ..Default::default()
        }
    }

    pub fn anderson(tol: f64, max_iters: usize) -> Self {
        SolveConfig {
            method: SolverMethod::Anderson,
            tol,
            max_iters,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::contract(format!("solver tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::contract("solver max_iters must be >= 1"));
        }
        if self.anderson_memory == 0 {
            return Err(Error::contract("anderson_memory must be >= 1"));
        }
        if !(self.anderson_ridge >= 0.0) {
            return Err(Error::contract("anderson_ridge must be >= 0"));
        }
        Ok(())
    }
}

/// Outcome of a fixed-point solve.
///
/// `residuals[t]` is the relative distance between iterate `t` and its image
/// under the map. `fixed_index` is the least iterate passing the tolerance
/// when `converged`, otherwise the iterate with the smallest residual (first
/// on ties); `state` is that iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub state: Vec<f64>,
    /// Iterates `0..steps` followed by the image of the last one.
    pub trajectory: Option<Vec<Vec<f64>>>,
    pub residuals: Vec<f64>,
    pub fixed_index: usize,
    pub converged: bool,
    /// Number of map evaluations.
    pub steps: usize,
}

impl SolveResult {
    /// Recorded iterates up to and including the selected one.
    pub fn path_to_fixed(&self) -> Option<&[Vec<f64>]> {
        self.trajectory.as_deref().map(|t| &t[..=self.fixed_index])
    }
}

/// `‖next − prev‖ / (‖next‖ + 1e-8)`
pub fn residual(prev: &[f64], next: &[f64]) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::ShapeMismatch {
            op: "residual",
            lhs: vec![prev.len()],
            rhs: vec![next.len()],
        });
    }
    let diff: f64 = prev
        .iter()
        .zip(next)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let scale = next.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok(diff / (scale + RESIDUAL_GUARD))
}

/// Smallest index whose residual is below `tol`.
pub fn least_fixed_index(residuals: &[f64], tol: f64) -> Option<usize> {
    residuals.iter().position(|&r| r < tol)
}

/// Iterates `f` from `z0` until the first pre-fixed point.
pub fn solve<F>(mut f: F, z0: &[f64], cfg: &SolveConfig) -> Result<SolveResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut x = z0.to_vec();
    if !all_finite(&x) {
        return Err(Error::Solver {
            steps: 0,
            reason: "non-finite initial state".into(),
            last_finite: Vec::new(),
        });
    }
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut residuals = Vec::new();
    let mut mixer = Anderson::new(cfg.anderson_memory, cfg.anderson_beta, cfg.anderson_ridge);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;

    for t in 0..cfg.max_iters {
        let fx = f(&x)?;
        if fx.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "fixed-point map",
                lhs: vec![x.len()],
                rhs: vec![fx.len()],
            });
        }
        if !all_finite(&fx) {
            return Err(Error::Solver {
                steps: t + 1,
                reason: "map produced a non-finite value".into(),
                last_finite: x,
            });
        }
        let r = residual(&x, &fx)?;
        residuals.push(r);
        if let Some(tr) = trajectory.as_mut() {
            tr.push(x.clone());
        }
        if best.as_ref().is_none_or(|(_, br, _)| r < *br) {
            best = Some((t, r, x.clone()));
        }
        if r < cfg.tol {
            if let Some(tr) = trajectory.as_mut() {
                tr.push(fx);
            }
            return Ok(SolveResult {
                state: x,
                trajectory,
                residuals,
                fixed_index: t,
                converged: true,
                steps: t + 1,
            });
        }
        let next = match cfg.method {
            SolverMethod::FixedPoint => fx.clone(),
            SolverMethod::Anderson => mixer.step(&x, &fx),
        };
        if t + 1 == cfg.max_iters {
            if let Some(tr) = trajectory.as_mut() {
                tr.push(fx);
            }
            break;
        }
        if !all_finite(&next) {
            return Err(Error::Solver {
                steps: t + 1,
                reason: "solver step produced a non-finite value".into(),
                last_finite: x,
            });
        }
        x = next;
    }

    let (idx, _, state) = best.expect("at least one iteration ran");
    Ok(SolveResult {
        state,
        trajectory,
        residuals,
        fixed_index: idx,
        converged: false,
        steps: cfg.max_iters,
    })
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Anderson mixing in difference form.
///
/// With residual `g = f(x) − x`, solves
/// `min_γ ‖g_k − ΔG γ‖² + λ‖γ‖²` over the last `memory` differences and
/// steps to `x_k + β g_k − (ΔX + β ΔG) γ`.
struct Anderson {
    memory: usize,
    beta: f64,
    ridge: f64,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    dx: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(memory: usize, beta: f64, ridge: f64) -> Self {
        Anderson {
            memory,
            beta,
            ridge,
            prev: None,
            dx: Vec::new(),
            dg: Vec::new(),
        }
    }

    fn step(&mut self, x: &[f64], fx: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = fx.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((px, pg)) = self.prev.take() {
            if self.dx.len() == self.memory {
                self.dx.remove(0);
                self.dg.remove(0);
            }
            self.dx.push(x.iter().zip(&px).map(|(a, b)| a - b).collect());
            self.dg.push(g.iter().zip(&pg).map(|(a, b)| a - b).collect());
        }
        self.prev = Some((x.to_vec(), g.clone()));

        let plain: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + self.beta * gi).collect();
        let m = self.dg.len();
        if m == 0 {
            return plain;
        }
        let mut gram = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            rhs[i] = dot(&self.dg[i], &g);
            for j in 0..=i {
                let v = dot(&self.dg[i], &self.dg[j]);
                gram[i * m + j] = v;
                gram[j * m + i] = v;
            }
        }
        let mean_diag = (0..m).map(|i| gram[i * m + i]).sum::<f64>() / m as f64;
        if !(mean_diag > 0.0) {
            return plain;
        }
        let lambda = self.ridge * mean_diag;
        for i in 0..m {
            gram[i * m + i] += lambda;
        }
        let Some(gamma) = solve_dense(&mut gram, &mut rhs, m) else {
            return plain;
        };
        let mut out = plain;
        for (k, &gk) in gamma.iter().enumerate() {
            for (o, (dxi, dgi)) in out.iter_mut().zip(self.dx[k].iter().zip(&self.dg[k])) {
                *o -= gk * (dxi + self.beta * dgi);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_of_identical_states_is_zero() {
        assert_eq!(residual(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn residual_from_origin() {
        let r = residual(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 5.0 / (5.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn residual_small_step() {
        // ‖(0, 0.001)‖ / (‖(1, 0.001)‖ + 1e-8), worked by hand.
        let expected = 0.001 / ((1.0f64 + 1e-6).sqrt() + 1e-8);
        let r = residual(&[1.0, 0.0], &[1.0, 0.001]).unwrap();
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.001 / 1.0000005).abs() < 1e-10);
    }

    #[test]
    fn residual_shape_mismatch() {
        assert!(matches!(
            residual(&[1.0], &[1.0, 2.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn least_fixed_index_examples() {
        assert_eq!(least_fixed_index(&[0.5, 0.05, 0.2, 0.01], 0.1), Some(1));
        assert_eq!(least_fixed_index(&[0.5, 0.2], 0.1), None);
    }

    #[test]
    fn halving_map_converges_to_zero() {
        for method in [SolverMethod::FixedPoint, SolverMethod::Anderson] {
            let cfg = SolveConfig {
                method,
                tol: 1e-6,
                max_iters: 200,
                ..Default::default()
            };
            // residual of z -> z/2 is 1/(1 + tiny) until z underflows the guard
            let res = solve(|z| Ok(vec![z[0] / 2.0]), &[1.0], &cfg).unwrap();
            assert!(res.converged);
            assert!(res.state[0].abs() < 1e-7, "{method:?}: {:?}", res.state);
        }
    }

    #[test]
    fn cosine_fixed_point() {
        // Dottie number, from a long plain iteration.
        let mut z = 0.0f64;
        for _ in 0..10_000 {
            z = z.cos();
        }
        for method in [SolverMethod::FixedPoint, SolverMethod::Anderson] {
            let cfg = SolveConfig {
                method,
                tol: 1e-12,
                max_iters: 500,
                ..Default::default()
            };
            let res = solve(|v| Ok(vec![v[0].cos()]), &[0.0], &cfg).unwrap();
            assert!(res.converged);
            assert!((res.state[0] - z).abs() < 1e-10);
            assert!((res.state[0] - 0.739085).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_iterate_is_an_error_with_last_state() {
        let cfg = SolveConfig::fixed_point(1e-6, 10);
        let err = solve(
            |z| Ok(vec![if z[0] > 3.0 { f64::NAN } else { z[0] * 2.0 }]),
            &[1.0],
            &cfg,
        )
        .unwrap_err();
        match err {
            Error::Solver { last_finite, .. } => assert_eq!(last_finite, vec![4.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_convergence_returns_best_flagged() {
        let cfg = SolveConfig {
            record_trajectory: true,
            ..SolveConfig::fixed_point(1e-9, 5)
        };
        // Rotation by 90 degrees never settles.
        let res = solve(|z| Ok(vec![-z[1], z[0]]), &[1.0, 0.0], &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.steps, 5);
        assert_eq!(res.residuals.len(), 5);
        assert_eq!(res.trajectory.as_ref().unwrap().len(), 6);
        let min = res.residuals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(res.residuals[res.fixed_index], min);
    }

    #[test]
    fn trajectory_residuals_are_consecutive_for_plain_iteration() {
        let cfg = SolveConfig {
            record_trajectory: true,
            ..SolveConfig::fixed_point(1e-3, 100)
        };
        let res = solve(|z| Ok(vec![0.5 * z[0] + 1.0]), &[0.0], &cfg).unwrap();
        let tr = res.trajectory.unwrap();
        assert_eq!(tr.len(), res.residuals.len() + 1);
        for (t, r) in res.residuals.iter().enumerate() {
            assert_eq!(*r, residual(&tr[t], &tr[t + 1]).unwrap());
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SolveConfig {
            tol: 0.0,
            ..Default::default()
        };
        assert!(solve(|z| Ok(z.to_vec()), &[0.0], &bad).is_err());
        let bad = SolveConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(solve(|z| Ok(z.to_vec()), &[0.0], &bad).is_err());
    }
}
