mod common;

use dear::fixpoint::{least_fixed_index, residual, solve, SolveConfig};
use proptest::prelude::*;

#[test]
fn anderson_matches_direct_solve_on_linear_contractions() {
    for seed in 0..40 {
        let dim = 1 + (seed as usize * 7) % 32;
        let (a, b) = common::random_contraction(dim, 0.9, seed);
        let cfg = SolveConfig::anderson(1e-12, 500);
        let r = solve(|z| Ok(common::affine(&a, &b, z)), &vec![0.0; dim], &cfg).unwrap();
        assert!(r.converged, "seed {seed} dim {dim} did not converge");
        let exact = common::direct(&a, &b);
        let err = common::rel_err(&r.state, &exact);
        assert!(err < 1e-8, "seed {seed} dim {dim}: relative error {err:e}");
    }
}

#[test]
fn anderson_needs_fewer_steps_than_plain_iteration() {
    // Eigenvalues spread up to 0.97: plain iteration needs hundreds of steps.
    let a: Vec<f64> = (0..256)
        .map(|k| if k / 16 == k % 16 { 0.1 + 0.87 * (k / 16) as f64 / 15.0 } else { 0.0 })
        .collect();
    let b: Vec<f64> = (0..16).map(|i| (i as f64 * 0.61).cos()).collect();
    let f = |z: &[f64]| Ok(common::affine(&a, &b, z));
    let plain = solve(f, &[0.0; 16], &SolveConfig::fixed_point(1e-8, 2000)).unwrap();
    let anderson = solve(f, &[0.0; 16], &SolveConfig::anderson(1e-8, 2000)).unwrap();
    assert!(plain.converged && anderson.converged);
    assert!(anderson.steps < plain.steps, "{} vs {}", anderson.steps, plain.steps);
}

#[test]
fn trajectory_fixed_index_is_least_passing_iterate() {
    for seed in 0..20 {
        let (a, b) = common::random_contraction(8, 0.8, seed);
        let cfg = SolveConfig {
            record_trajectory: true,
            ..SolveConfig::fixed_point(1e-3, 200)
        };
        let r = solve(|z| Ok(common::affine(&a, &b, z)), &[0.0; 8], &cfg).unwrap();
        let traj = r.trajectory.as_ref().unwrap();
        // Recompute every residual independently from the recorded iterates.
        let recomputed: Vec<f64> = traj[..traj.len() - 1]
            .iter()
            .map(|x| residual(x, &common::affine(&a, &b, x)).unwrap())
            .collect();
        assert_eq!(least_fixed_index(&recomputed, cfg.tol), Some(r.fixed_index));
        assert_eq!(r.state, traj[r.fixed_index]);
        assert_eq!(r.path_to_fixed().unwrap().len(), r.fixed_index + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn least_fixed_index_is_minimal(
        residuals in proptest::collection::vec(0.0f64..1.0, 0..40),
        tol in 0.01f64..0.5,
    ) {
        match least_fixed_index(&residuals, tol) {
            Some(i) => {
                prop_assert!(residuals[i] < tol);
                prop_assert!(residuals[..i].iter().all(|&r| r >= tol));
            }
            None => prop_assert!(residuals.iter().all(|&r| r >= tol)),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solves_return_a_pre_fixed_point(seed in 0u64..10_000, dim in 1usize..12) {
        let (a, b) = common::random_contraction(dim, 0.7, seed);
        for cfg in [SolveConfig::anderson(1e-6, 300), SolveConfig::fixed_point(1e-6, 300)] {
            let r = solve(|z| Ok(common::affine(&a, &b, z)), &vec![0.0; dim], &cfg).unwrap();
            prop_assert!(r.converged);
            let next = common::affine(&a, &b, &r.state);
            prop_assert!(residual(&r.state, &next).unwrap() < cfg.tol);
            prop_assert_eq!(r.residuals.len(), r.steps);
        }
    }
}
