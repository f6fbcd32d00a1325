use proptest::prelude::*;

use subdiff::caputo::{assemble_l1, assemble_l2, MonomialSum};
use subdiff::harness::{energy_diagnostic, estimate_order, theoretical_bound};
use subdiff::mesh::{analyze_mesh, MeshAssumptionConfig};
use subdiff::mittag_leffler::ml_neg;
use subdiff::monotone::{
    comparison_trial, compute_representation, inverse_monotonicity_oracle, BetaSearch, TrialSettings,
};
use subdiff::spatial::{EllipticOperator1D, SpatialGrid1D};
use subdiff::stepper::{solve, InitialGuess, NonlinearSolveConfig, ProblemSpec};
use subdiff::{Exec, TemporalMesh};

fn alpha() -> impl Strategy<Value = f64> {
    0.05f64..0.95
}

fn grade() -> impl Strategy<Value = f64> {
    1.0f64..4.0
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graded_step_ratios_decrease_towards_one(r in grade(), steps in 2usize..400, t_final in 0.1f64..10.0) {
        let mesh = TemporalMesh::graded(t_final, steps, r).unwrap();
        for j in 2..=steps {
            prop_assert!(mesh.rho(j) >= 1.0 - 1e-12);
            if j < steps {
                prop_assert!(mesh.rho(j + 1) <= mesh.rho(j) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn a2_index_does_not_grow_with_m(a in alpha(), r in grade(), rho_star in 1.05f64..3.0) {
        let cfg = MeshAssumptionConfig::with_rho_bound(rho_star).unwrap();
        let ks: Vec<Option<usize>> = [256, 1024, 4096]
            .iter()
            .map(|&m| analyze_mesh(&TemporalMesh::graded(1.0, m, r).unwrap(), &cfg, a, 0.0).unwrap().a2_k)
            .collect();
        prop_assert!(ks[0].is_some());
        prop_assert!(ks.iter().all(|k| *k == ks[0]), "{:?}", ks);
    }

    #[test]
    fn a3_brackets_stable_under_doubling(r in grade()) {
        let cfg = MeshAssumptionConfig::default();
        let a3 = |m: usize| analyze_mesh(&TemporalMesh::graded(1.0, m, r).unwrap(), &cfg, 0.5, 0.0).unwrap().a3;
        let (p, q) = (a3(512), a3(1024));
        prop_assert!(rel_err(q.step_ratio.0, p.step_ratio.0) < 0.05);
        prop_assert!(rel_err(q.step_ratio.1, p.step_ratio.1) < 0.05);
    }

    #[test]
    fn l2_rows_reproduce_linears_and_quadratics(
        a in alpha(), r in grade(), steps in 2usize..200, c1 in 0.1f64..2.0, c2 in 0.1f64..2.0,
    ) {
        let mesh = TemporalMesh::graded(1.0, steps, r).unwrap();
        let op = assemble_l2(&mesh, a).unwrap();
        let lin = MonomialSum { constant: 0.0, terms: vec![(c1, 1.0)] };
        let quad = MonomialSum { constant: 0.0, terms: vec![(c1, 1.0), (c2, 2.0)] };
        for (u, first) in [(&lin, 1), (&quad, 2)] {
            let samples: Vec<f64> = mesh.points().iter().map(|&t| u.eval(t)).collect();
            for m in first..=steps {
                let got = op.apply_history(&samples[..=m], m).unwrap();
                prop_assert!(rel_err(got, u.caputo(a, mesh.t(m)).unwrap()) <= 1e-10, "m = {}", m);
            }
        }
    }

    #[test]
    fn row_sums_and_diagonal_bound(a in alpha(), r in grade(), steps in 1usize..200) {
        let mesh = TemporalMesh::graded(1.0, steps, r).unwrap();
        for op in [assemble_l2(&mesh, a).unwrap(), assemble_l1(&mesh, a).unwrap()] {
            let checks = op.validate();
            prop_assert!(checks.row_sums_ok && checks.diag_bound_ok, "{:?}", checks);
        }
        prop_assert!(assemble_l1(&mesh, a).unwrap().validate().z_pattern);
    }

    #[test]
    fn representation_reconstructs_operator(
        a in 0.5f64..0.95, r in 1.0f64..3.0, steps in 1usize..64, seed in any::<u64>(),
    ) {
        let op = assemble_l2(&TemporalMesh::graded(1.0, steps, r).unwrap(), a).unwrap();
        let outcome = compute_representation(&op, &BetaSearch::default());
        let rep = outcome.representation().unwrap();
        prop_assert!(rep.sign_ok());
        let mut state = seed;
        let history: Vec<f64> = (0..=steps)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        for m in 1..=steps {
            let direct = op.apply_history(&history[..=m], m).unwrap();
            let scale: f64 = op.row(m).iter().zip(&history).map(|(c, u)| (c * u).abs()).sum();
            prop_assert!((rep.apply(&history, m).unwrap() - direct).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn sign_ok_implies_inverse_monotone_and_comparison(a in alpha(), r in 1.0f64..4.0, steps in 2usize..48) {
        let op = assemble_l2(&TemporalMesh::graded(1.0, steps, r).unwrap(), a).unwrap();
        let sign_ok = compute_representation(&op, &BetaSearch::default()).representation().is_some_and(|rep| rep.sign_ok());
        let inverse = inverse_monotonicity_oracle(&op, Exec::default());
        if sign_ok {
            prop_assert!(inverse.nonneg, "min entry {}", inverse.min_entry);
        }
        if inverse.nonneg {
            let settings = TrialSettings { trials: 50, seed: 1, ..Default::default() };
            prop_assert_eq!(comparison_trial(&op, 0.0, &settings).unwrap().violations, 0);
        }
    }

    #[test]
    fn elliptic_symmetric_positive_and_monotone(
        n in 3usize..60,
        bumps in prop::collection::vec(-1.0f64..1.0, 6),
        shift in 0.0f64..100.0,
    ) {
        let grid = SpatialGrid1D::new(2.0, n).unwrap();
        let op = EllipticOperator1D::assemble(grid, |x| 1.5 + bumps[0] * (3.0 * x).sin()).unwrap();
        let u = grid.sample(|x| bumps[1] * x.cos() + bumps[2] * (5.0 * x).sin());
        let w = grid.sample(|x| bumps[3] * x * x + bumps[4]);
        let (lu, lw) = (op.apply(&u), op.apply(&w));
        let (uw, wu) = (grid.inner(&lu, &w), grid.inner(&u, &lw));
        prop_assert!((uw - wu).abs() <= 1e-10 * (uw.abs() + wu.abs() + 1.0));
        let energy = grid.inner(&lu, &u);
        prop_assert!(energy >= 0.0);
        if grid.norm(&u) > 1e-8 {
            prop_assert!(energy > 0.0);
        }
        let g: Vec<f64> = grid.sample(|x| (bumps[5] * x).sin().abs());
        let sol = op.solve_shifted(shift + 1e-3, &g).unwrap();
        prop_assert!(sol.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mittag_leffler_in_unit_interval_and_decreasing(a in 0.2f64..1.0) {
        let mut prev = 1.0;
        for i in 1..=30 {
            let e = ml_neg(a, -0.4 * i as f64).unwrap();
            prop_assert!(e > 0.0 && e <= 1.0);
            prop_assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn bound_is_positive(a in alpha(), r in 1.0f64..8.0, steps in 1usize..1000, frac in 0.0f64..1.0) {
        let mesh = TemporalMesh::graded(1.0, steps, r).unwrap();
        let m = 1 + ((steps - 1) as f64 * frac) as usize;
        prop_assert!(theoretical_bound(a, r, steps, mesh.t(m), mesh.t(1)).unwrap() > 0.0);
    }

    #[test]
    fn order_of_power_law(c in 1e-6f64..1e3, p in 0.5f64..4.0) {
        let ms = [16, 32, 64, 128];
        let e: Vec<f64> = ms.iter().map(|&m| c * (m as f64).powf(-p)).collect();
        prop_assert!((estimate_order(&ms, &e).unwrap() - p).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn initial_guess_does_not_change_solution(a in 0.2f64..0.9, lambda in 0.1f64..2.0) {
        let problem = ProblemSpec::semilinear_sine(a, 1.0, 1.0, lambda).unwrap();
        let mesh = TemporalMesh::graded(1.0, 24, 2.0).unwrap();
        let grid = SpatialGrid1D::unit(31).unwrap();
        let tol = NonlinearSolveConfig::default().tolerance;
        let prev = solve(&problem, &mesh, grid, &NonlinearSolveConfig::default()).unwrap();
        let zero_cfg = NonlinearSolveConfig { initial_guess: InitialGuess::Zero, ..Default::default() };
        let zero = solve(&problem, &mesh, grid, &zero_cfg).unwrap();
        for m in 0..=24 {
            let scale = grid.norm(prev.u(m)).max(1.0);
            let d: Vec<f64> = prev.u(m).iter().zip(zero.u(m)).map(|(x, y)| x - y).collect();
            prop_assert!(grid.norm(&d) <= 10.0 * tol * scale);
        }
    }

    #[test]
    fn linear_problem_matches_direct_recursion(a in 0.2f64..0.9, r in 1.0f64..3.0, k in 1usize..4) {
        let problem = ProblemSpec::linear_sine(a, 1.0, 1.0).unwrap()
            .with_initial(move |x| (std::f64::consts::PI * x).sin() + 0.3 * (k as f64 * std::f64::consts::PI * x).sin());
        let mesh = TemporalMesh::graded(1.0, 20, r).unwrap();
        let grid = SpatialGrid1D::unit(25).unwrap();
        let traj = solve(&problem, &mesh, grid, &NonlinearSolveConfig::default()).unwrap();
        let op = assemble_l2(&mesh, a).unwrap();
        let elliptic = EllipticOperator1D::constant(grid, 1.0).unwrap();
        let mut us = vec![traj.u(0).to_vec()];
        for m in 1..=20 {
            let row = op.row(m);
            let rhs: Vec<f64> = (0..grid.len()).map(|i| -(0..m).map(|j| row[j] * us[j][i]).sum::<f64>()).collect();
            us.push(elliptic.solve_shifted(row[m], &rhs).unwrap());
        }
        for (m, u) in us.iter().enumerate() {
            let d: Vec<f64> = u.iter().zip(traj.u(m)).map(|(x, y)| x - y).collect();
            prop_assert!(grid.norm(&d) <= 1e-12 * grid.norm(u).max(1e-300));
        }
    }

    #[test]
    fn nonnegative_data_stays_nonnegative(a in 0.2f64..0.9, r in 1.0f64..2.5, w in prop::collection::vec(0.0f64..1.0, 3)) {
        let problem = ProblemSpec::linear_sine(a, 1.0, 1.0).unwrap().with_initial(move |x| {
            w.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * x).sin().abs()).sum()
        });
        let mesh = TemporalMesh::graded(1.0, 32, r).unwrap();
        if inverse_monotonicity_oracle(&assemble_l2(&mesh, a).unwrap(), Exec::default()).nonneg {
            let traj = solve(&problem, &mesh, SpatialGrid1D::unit(41).unwrap(), &NonlinearSolveConfig::default()).unwrap();
            prop_assert!(traj.values.iter().flatten().all(|&v| v >= -1e-10));
        }
    }

    #[test]
    fn energy_dominates_averaged_norm(a in 0.5f64..0.95, seed in 0u64..1000) {
        let mesh = TemporalMesh::graded(1.0, 12, 2.0).unwrap();
        let op = assemble_l2(&mesh, a).unwrap();
        let outcome = compute_representation(&op, &BetaSearch::default());
        let rep = outcome.representation().unwrap();
        let grid = SpatialGrid1D::unit(9).unwrap();
        let elliptic = EllipticOperator1D::constant(grid, 1.0).unwrap();
        let s = seed as f64;
        let values: Vec<Vec<f64>> = (0..=12).map(|m| grid.sample(|x| ((m as f64 + 1.0) * x + s).sin())).collect();
        let w = energy_diagnostic(&values, rep, &elliptic).unwrap();
        for m in 1..=12 {
            let vm: Vec<f64> = values[m].iter().zip(&values[m - 1])
                .map(|(u, p)| (u - rep.betas[m] * p) / (1.0 - rep.betas[m])).collect();
            prop_assert!(w[m] >= grid.norm(&vm) * (1.0 - 1e-14));
        }
    }
}
