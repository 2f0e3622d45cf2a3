//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wncs_core::config::{load_scenario, parse_scenario, Scenario};
use wncs_core::convex::{check_solution, ConvexProgram};

pub fn paper_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_default.toml")
}

pub fn paper_scenario() -> Scenario {
    load_scenario(&paper_path()).unwrap()
}

/// The paper scenario with a custom layout; positions are TOML arrays.
pub fn layout(bs: &str, plants: &str, num_bs: usize, num_plants: usize) -> Scenario {
    let text = std::fs::read_to_string(paper_path()).unwrap();
    let text: String = text
        .lines()
        .filter(|l| !l.starts_with("num_bs") && !l.starts_with("num_plants") && !l.starts_with("bs_positions_m"))
        .map(|l| format!("{l}\n"))
        .collect();
    parse_scenario(&format!(
        "num_bs = {num_bs}\nnum_plants = {num_plants}\nbs_positions_m = {bs}\nplant_positions_m = {plants}\n{text}"
    ))
    .unwrap()
}

/// Random program in 2 or 3 variables whose feasible set contains the
/// origin: box bounds, random ellipsoids, one half-space and, in the plane,
/// the unit disc written as a 2×2 LMI.
pub fn random_program(seed: u64) -> ConvexProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=3);
    let mut p = ConvexProgram::new();
    for j in 0..n {
        let v = p.add_var(format!("x{j}"), -2.0, 2.0);
        p.set_objective(v, rng.random_range(-1.0..1.0));
    }
    for i in 0..rng.random_range(1..=3) {
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shape = &l * l.transpose() + DMatrix::identity(n, n) * 0.2;
        let center: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // (x − c)ᵀP(x − c) ≤ cᵀPc + s  ⇔  xᵀPx − 2(Pc)ᵀx − s ≤ 0.
        let pc = &shape * nalgebra::DVector::from_vec(center);
        let q: Vec<f64> = pc.iter().map(|v| -2.0 * v).collect();
        let s = rng.random_range(0.2..1.5);
        p.add_quadratic(format!("ell{i}"), (0..n).collect(), shape, q, -s).unwrap();
    }
    let a: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-1.0..1.0))).collect();
    p.add_affine("half", a, rng.random_range(0.1..1.0));
    if n == 2 {
        let e = |a: f64, b: f64, c: f64| DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
        p.add_lmi("disc", vec![0, 1], e(1.0, 0.0, 1.0), vec![e(1.0, 0.0, -1.0), e(0.0, 1.0, 0.0)])
            .unwrap();
    }
    p
}

/// Minimizes the linear objective by repeatedly zooming a uniform grid on
/// the best feasible point found so far.
pub fn grid_minimum(p: &ConvexProgram) -> f64 {
    let n = p.num_vars();
    let per_axis: usize = if n == 2 { 101 } else { 31 };
    let mut lo = p.lower.clone();
    let mut hi = p.upper.clone();
    let mut best = f64::INFINITY;
    let mut best_x = vec![0.0; n];
    for _ in 0..60 {
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = (0..n)
                .map(|j| lo[j] + (hi[j] - lo[j]) * idx[j] as f64 / (per_axis - 1) as f64)
                .collect();
            let f: f64 = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
            if f < best && check_solution(p, &x).max_violation() <= 0.0 {
                best = f;
                best_x = x;
            }
            let mut j = 0;
            while j < n {
                idx[j] += 1;
                if idx[j] < per_axis {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
        for j in 0..n {
            // Halving keeps thin slivers near the optimum inside the window.
            let w = 0.25 * (hi[j] - lo[j]);
            lo[j] = (best_x[j] - w).max(p.lower[j]);
            hi[j] = (best_x[j] + w).min(p.upper[j]);
        }
    }
    best
}
