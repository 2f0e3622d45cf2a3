use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use wncs_core::control::{
    average_control_cost, discretize, feasible_t_interval, simulate_from, stability_holds, stability_matrices,
    stability_matrix, DiscretizationMode, NoiseModel, PlantModel, SimOptions, Trajectory,
};

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// A = 0, B = Q = I, K_fb = κI: stable exactly on the roots of
/// −κ²T² + 2κT + (η − 1) = 0.
fn scalar_like(eta: f64, kappa: f64) -> PlantModel {
    PlantModel::new(DMatrix::zeros(2, 2), eye(2), eye(2), eye(2), eye(2) * kappa, eta).unwrap()
}

fn closed_form(eta: f64, kappa: f64) -> (f64, f64) {
    // Quadratic formula on κ²T² − 2κT + (1 − η) = 0.
    let (a, b, c) = (kappa * kappa, -2.0 * kappa, 1.0 - eta);
    let disc = (b * b - 4.0 * a * c).sqrt();
    ((-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a))
}

#[test]
fn interval_matches_closed_form_on_grid() {
    for eta in [0.5, 0.8, 0.95] {
        for kappa in [1.0, 10.0] {
            let p = scalar_like(eta, kappa);
            let form = stability_matrices(&p, 0.0);
            let iv = feasible_t_interval(&form, &p.q, eta, 10.0).unwrap();
            let (lo, hi) = closed_form(eta, kappa);
            assert!((iv.t_min - lo).abs() < 1e-6, "eta {eta} kappa {kappa}: {} vs {lo}", iv.t_min);
            assert!((iv.t_max - hi).abs() < 1e-6, "eta {eta} kappa {kappa}: {} vs {hi}", iv.t_max);
        }
    }
}

#[test]
fn eta_08_kappa_10_reference() {
    let p = scalar_like(0.8, 10.0);
    let iv = feasible_t_interval(&stability_matrices(&p, 0.0), &p.q, 0.8, 1.0).unwrap();
    assert!((iv.t_min - 0.01056).abs() < 1e-5);
    assert!((iv.t_max - 0.18944).abs() < 1e-5);
}

#[test]
fn interval_tends_to_zero_and_two_over_kappa() {
    let kappa = 10.0;
    let mut prev_width = 0.0;
    for eta in [0.9, 0.99, 0.9999, 0.999999] {
        let p = scalar_like(eta, kappa);
        let iv = feasible_t_interval(&stability_matrices(&p, 0.0), &p.q, eta, 1.0).unwrap();
        let width = iv.t_max - iv.t_min;
        assert!(width > prev_width);
        prev_width = width;
    }
    let p = scalar_like(0.999999, kappa);
    let iv = feasible_t_interval(&stability_matrices(&p, 0.0), &p.q, 0.999999, 1.0).unwrap();
    assert!(iv.t_min < 1e-3 / kappa * 2.0);
    assert!((iv.t_max - 2.0 / kappa).abs() < 1e-3 / kappa * 2.0);
}

#[test]
fn unstable_plant_without_feedback_has_no_stable_period() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let p = PlantModel::new(a, eye(2), eye(2), eye(2), DMatrix::zeros(2, 2), 0.8).unwrap();
    let form = stability_matrices(&p, 0.0);
    assert!(feasible_t_interval(&form, &p.q, 0.8, 1.0).is_none());
    // Brute force: no point of a fine grid is stable.
    for i in 1..=100_000 {
        let t = i as f64 * 1e-5;
        assert!(!stability_holds(&form, &p.q, 0.8, t, t * t), "T = {t}");
    }
}

/// Solves Σ = G Σ Gᵀ + R by fixed-point iteration.
fn lyapunov_trace(g: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let mut s = r.clone();
    for _ in 0..10_000 {
        let next = g * &s * g.transpose() + r;
        if (&next - &s).abs().max() < 1e-14 {
            return next.trace();
        }
        s = next;
    }
    s.trace()
}

#[test]
fn stationary_energy_matches_lyapunov_equation() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 60.0).unwrap();
    let t = 5e-3;
    let opts = SimOptions::default();
    let g = discretize(&p, t, DiscretizationMode::Exact).closed_loop(&p.k_fb);
    let expected = lyapunov_trace(&g, &p.r);
    let traj = simulate_from(&p, t, 0.0, DVector::zeros(2), 100_000, 11, &opts);
    let burn = 1000;
    let mean = traj.cost[burn..].iter().sum::<f64>() / (traj.cost.len() - burn) as f64;
    assert!((mean / expected - 1.0).abs() < 0.05, "{mean} vs {expected}");
}

#[test]
fn two_constant_plants_cost_five() {
    let constant = |x: [f64; 2], n: usize| {
        let v = DVector::from_row_slice(&x);
        Trajectory {
            states: vec![v.clone(); n + 1],
            outages: vec![false; n],
            cost: vec![v.norm_squared(); n + 1],
        }
    };
    let j = average_control_cost(&[constant([1.0, 0.0], 10), constant([0.0, 2.0], 10)], 10);
    assert!((j - 5.0).abs() < 1e-15);
}

#[test]
fn integrated_noise_grows_with_period() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 60.0).unwrap();
    let opts = SimOptions {
        noise: NoiseModel::Integrated,
        ..SimOptions::default()
    };
    let w1 = wncs_core::control::sample_noise_covariance(&p, 1e-3, &opts);
    let w2 = wncs_core::control::sample_noise_covariance(&p, 2e-3, &opts);
    assert!(w2.trace() > w1.trace());
    assert!((w1.trace() / 2e-3 - 1.0).abs() < 1e-2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn holds_exactly_inside_the_interval(eta in 0.3f64..0.97, kappa in 0.5f64..50.0, u in 0.0f64..1.0) {
        let p = scalar_like(eta, kappa);
        let form = stability_matrices(&p, 0.0);
        let (lo, hi) = closed_form(eta, kappa);
        let t = u * 2.5 * hi;
        prop_assume!(t > 0.0 && (t - lo).abs() > 1e-6 * hi && (t - hi).abs() > 1e-6 * hi);
        prop_assert_eq!(stability_holds(&form, &p.q, eta, t, t * t), t > lo && t < hi);
    }

    #[test]
    fn matrix_equals_quadratic_in_period(
        entries in prop::collection::vec(-3.0f64..3.0, 8),
        eps in 0.0f64..0.1,
        eta in 0.1f64..0.99,
        t in 1e-4f64..0.5,
    ) {
        let a = DMatrix::from_row_slice(2, 2, &entries[..4]);
        let k = DMatrix::from_row_slice(2, 2, &entries[4..]);
        let p = PlantModel::new(a.clone(), eye(2), eye(2), eye(2), k.clone(), eta).unwrap();
        let form = stability_matrices(&p, eps);
        prop_assert!((&form.phi - form.phi.transpose()).abs().max() <= 1e-12);
        prop_assert!((&form.upsilon - form.upsilon.transpose()).abs().max() <= 1e-12);
        // Direct assembly from the defining expressions with B = Q = I.
        let s = (1.0 - eps).powi(2);
        let ups = (k.transpose() + &k) * s - (a.transpose() + &a);
        let phi_raw = (a.transpose() * &k + k.transpose() * &a - k.transpose() * &k) * s - a.transpose() * &a;
        let phi = (&phi_raw + phi_raw.transpose()) * 0.5;
        let direct = &phi * (t * t) + &ups * t + eye(2) * (eta - 1.0);
        let m = stability_matrix(&form, &p.q, eta, t, t * t);
        prop_assert!((&m - &direct).abs().max() <= 1e-10 * (1.0 + direct.abs().max()));
    }

    #[test]
    fn symmetric_inputs_are_left_unchanged(d in prop::collection::vec(-2.0f64..2.0, 3), kappa in 0.5f64..20.0) {
        // Symmetric A with K = κI keeps every product symmetric already.
        let a = DMatrix::from_row_slice(2, 2, &[d[0], d[1], d[1], d[2]]);
        let p = PlantModel::new(a.clone(), eye(2), eye(2), eye(2), eye(2) * kappa, 0.8).unwrap();
        let form = stability_matrices(&p, 0.0);
        let ups = eye(2) * (2.0 * kappa) - &a * 2.0;
        let phi = &a * (2.0 * kappa) - eye(2) * (kappa * kappa) - &a * &a;
        prop_assert!((&form.upsilon - ups).abs().max() <= 1e-12 * (1.0 + kappa));
        prop_assert!((&form.phi - phi).abs().max() <= 1e-12 * (1.0 + kappa * kappa));
    }

    #[test]
    fn first_order_error_is_second_order(t in 1e-3f64..5e-2) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 10.0).unwrap();
        let err = |t: f64| {
            let e = discretize(&p, t, DiscretizationMode::Exact);
            let f = discretize(&p, t, DiscretizationMode::FirstOrder);
            (&e.gamma - &f.gamma).norm()
        };
        let ratio = err(t) / err(t / 2.0);
        prop_assert!((ratio / 4.0 - 1.0).abs() < 0.1, "ratio {}", ratio);
    }

    #[test]
    fn first_order_mode_is_exact_euler(t in 1e-4f64..1.0, entries in prop::collection::vec(-3.0f64..3.0, 4)) {
        let a = DMatrix::from_row_slice(2, 2, &entries);
        let p = PlantModel::new(a.clone(), eye(2) * 2.0, eye(2), eye(2), eye(2), 0.5).unwrap();
        let d = discretize(&p, t, DiscretizationMode::FirstOrder);
        prop_assert_eq!(d.gamma, eye(2) + &a * t);
        prop_assert_eq!(d.lambda, eye(2) * 2.0 * t);
    }

    #[test]
    fn trajectory_shape_and_determinism(seed in any::<u64>(), h in 1usize..50, eps in 0.0f64..1.0) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 60.0).unwrap();
        let x0 = DVector::from_row_slice(&[0.3, -0.1]);
        let opts = SimOptions::default();
        let t1 = simulate_from(&p, 4e-3, eps, x0.clone(), h, seed, &opts);
        let t2 = simulate_from(&p, 4e-3, eps, x0, h, seed, &opts);
        prop_assert_eq!(t1.states.len(), h + 1);
        prop_assert_eq!(t1.outages.len(), h);
        prop_assert!(t1.cost.iter().all(|c| *c >= 0.0));
        prop_assert_eq!(t1.states, t2.states);
    }
}
