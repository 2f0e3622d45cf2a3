mod common;

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use wncs_core::convex::{check_solution, solve, solve_with, ClosureAtom, ConvexProgram, SolveStatus, SolverOptions};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn random_programs_match_grid_search() {
    for seed in 0..10 {
        let p = common::random_program(seed);
        let sol = solve(&p, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
        let oracle = common::grid_minimum(&p);
        assert!(rel(sol.objective, oracle) <= 1e-4, "seed {seed}: {} vs {oracle}", sol.objective);
        assert!(sol.objective <= oracle + 1e-7, "seed {seed}: solver above a feasible grid point");
    }
}

#[test]
fn ball_has_closed_form_minimum() {
    // min c·x over ‖x − x0‖² ≤ r²  =  c·x0 − r‖c‖.
    let mut p = ConvexProgram::new();
    let (c, x0, r) = ([0.6, -0.8, 0.3], [0.2, 0.1, -0.4], 0.7);
    for (j, cj) in c.iter().enumerate() {
        let v = p.add_var(format!("x{j}"), f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective(v, *cj);
    }
    let q: Vec<f64> = x0.iter().map(|v| -2.0 * v).collect();
    let rr = x0.iter().map(|v| v * v).sum::<f64>() - r * r;
    p.add_quadratic("ball", vec![0, 1, 2], DMatrix::identity(3, 3), q, rr).unwrap();
    let sol = solve(&p, None).unwrap();
    let norm_c = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let expected = c.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() - r * norm_c;
    assert!((sol.objective - expected).abs() < 1e-6, "{} vs {expected}", sol.objective);
}

#[test]
fn smooth_exponential_atom() {
    // min −y subject to e^y ≤ x, x ≤ 3  →  y = ln 3.
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 0.0, 3.0);
    let y = p.add_var("y", -10.0, 10.0);
    p.set_objective(y, -1.0);
    p.add_smooth(
        "exp",
        Arc::new(ClosureAtom::new("exp", vec![y, x], |z: &[f64]| {
            let e = z[0].exp();
            let h = DMatrix::from_row_slice(2, 2, &[e, 0.0, 0.0, 0.0]);
            Some((e - z[1], vec![e, -1.0], h))
        })),
    );
    let sol = solve(&p, None).unwrap();
    assert!((sol.x[y] - 3f64.ln()).abs() < 1e-6);
}

#[test]
fn infeasible_program_is_reported() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", -1.0, 1.0);
    p.set_objective(x, 1.0);
    p.add_affine("low", vec![(x, 1.0)], -0.5);
    p.add_affine("high", vec![(x, -1.0)], -0.5);
    let sol = solve(&p, None).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.infeasible_atom.is_some());
}

#[test]
fn warm_start_of_wrong_length_is_an_error() {
    let p = common::random_program(3);
    assert!(solve(&p, Some(&[0.0; 7])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reported_point_is_feasible(seed in any::<u64>()) {
        let p = common::random_program(seed);
        let sol = solve(&p, None).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let report = check_solution(&p, &sol.x);
        prop_assert!(report.max_violation() <= 1e-7, "{:?}", report.worst());
        let f: f64 = sol.x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
        prop_assert!((f - sol.objective).abs() <= 1e-12 * (1.0 + f.abs()));
    }

    #[test]
    fn warm_and_cold_starts_agree(seed in any::<u64>(), frac in 0.0f64..0.9) {
        let p = common::random_program(seed);
        let cold = solve(&p, None).unwrap();
        // Any interior point of the segment from the origin works as a warm start.
        let warm_x: Vec<f64> = cold.x.iter().map(|v| v * frac).collect();
        let warm = solve(&p, Some(&warm_x)).unwrap();
        prop_assert!(rel(warm.objective, cold.objective) <= 1e-6);
    }

    #[test]
    fn barrier_stages_do_not_increase(seed in any::<u64>()) {
        let p = common::random_program(seed);
        let sol = solve_with(&p, Some(&vec![0.0; p.num_vars()]), &SolverOptions::default()).unwrap();
        for w in sol.stages.windows(2) {
            prop_assert!(w[1].t > w[0].t);
            prop_assert!(w[1].objective <= w[0].objective + 1e-9 * (1.0 + w[0].objective.abs()));
        }
    }
}
