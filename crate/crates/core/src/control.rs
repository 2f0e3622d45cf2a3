//! Plant discretization, the quadratic-in-T stability form and closed-loop
//! Monte Carlo simulation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt, symmetrize};

/// Minimum eigenvalue accepted as positive semidefinite.
pub const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k_fb: DMatrix<f64>,
    pub eta: f64,
}

impl PlantModel {
    /// Plant whose nominal closed loop `A - B K_fb` equals `-kappa I`.
    pub fn with_kappa(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        eta: f64,
        kappa: f64,
    ) -> Result<Self> {
        let dim = a.nrows();
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::config("feedback_kappa", format!("must be > 0, got {kappa}")));
        }
        if b.shape() != (dim, dim) {
            return Err(Error::config("plant_b", format!("must be {dim}x{dim}")));
        }
        let b_inv = b
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::config("plant_b", "must be invertible to derive the feedback gain"))?;
        let k_fb = b_inv * (&a + DMatrix::identity(dim, dim) * kappa);
        Self::new(a, b, q, r, k_fb, eta)
    }

    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        k_fb: DMatrix<f64>,
        eta: f64,
    ) -> Result<Self> {
        let dim = a.nrows();
        if dim == 0 || a.ncols() != dim {
            return Err(Error::config("plant_a", "must be a nonempty square matrix"));
        }
        for (field, m) in [("plant_b", &b), ("plant_q", &q), ("plant_r", &r), ("plant_feedback_gain", &k_fb)] {
            if m.shape() != (dim, dim) {
                return Err(Error::config(field, format!("must be {dim}x{dim}")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(field, "entries must be finite"));
            }
        }
        if crate::linalg::max_abs(&(&q - q.transpose())) > 1e-12 || min_eigenvalue(&q) <= 0.0 {
            return Err(Error::config("plant_q", "must be symmetric positive definite"));
        }
        if crate::linalg::max_abs(&(&r - r.transpose())) > 1e-12 || min_eigenvalue(&r) < PSD_TOL {
            return Err(Error::config("plant_r", "must be symmetric positive semidefinite"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::config("plant_eta", format!("must lie in (0, 1), got {eta}")));
        }
        Ok(PlantModel { a, b, q, r, k_fb, eta })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationMode {
    Exact,
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDynamics {
    pub gamma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub period: f64,
    pub mode: DiscretizationMode,
}

impl DiscreteDynamics {
    pub fn closed_loop(&self, k_fb: &DMatrix<f64>) -> DMatrix<f64> {
        &self.gamma - &self.lambda * k_fb
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.iter().map(|v| v.abs()).sum::<f64>();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = m * scale;
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for j in 1..=18 {
        term = &term * &x / j as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

pub fn discretize(plant: &PlantModel, period: f64, mode: DiscretizationMode) -> DiscreteDynamics {
    let n = plant.dim();
    let (gamma, lambda) = match mode {
        DiscretizationMode::FirstOrder => (
            DMatrix::identity(n, n) + &plant.a * period,
            &plant.b * period,
        ),
        DiscretizationMode::Exact => {
            // exp([[A, B], [0, 0]] T) = [[Γ, Λ], [0, I]]
            let cols = plant.b.ncols();
            let mut aug = DMatrix::zeros(n + cols, n + cols);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&plant.a * period));
            aug.view_mut((0, n), (n, cols)).copy_from(&(&plant.b * period));
            let e = expm(&aug);
            (
                e.view((0, 0), (n, n)).into_owned(),
                e.view((0, n), (n, cols)).into_owned(),
            )
        }
    };
    DiscreteDynamics { gamma, lambda, period, mode }
}

/// Coefficients of the stability condition `Φ c + Υ T + (η-1) Q ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityForm {
    pub phi: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
}

pub fn stability_matrices(plant: &PlantModel, eps_th: f64) -> StabilityForm {
    let (a, q) = (&plant.a, &plant.q);
    let bk = &plant.b * &plant.k_fb;
    let s = (1.0 - eps_th).powi(2);
    let upsilon = (bk.transpose() * q + q * &bk) * s - (a.transpose() * q + q * a);
    let phi = (a.transpose() * q * &bk + bk.transpose() * q * a - bk.transpose() * q * &bk) * s
        - a.transpose() * q * a;
    StabilityForm {
        phi: symmetrize(&phi),
        upsilon: symmetrize(&upsilon),
    }
}

pub fn stability_matrix(form: &StabilityForm, q: &DMatrix<f64>, eta: f64, t: f64, c: f64) -> DMatrix<f64> {
    &form.phi * c + &form.upsilon * t + q * (eta - 1.0)
}

/// Smallest eigenvalue of the stability matrix.
pub fn stability_margin(form: &StabilityForm, q: &DMatrix<f64>, eta: f64, t: f64, c: f64) -> f64 {
    min_eigenvalue(&stability_matrix(form, q, eta, t, c))
}

pub fn stability_holds(form: &StabilityForm, q: &DMatrix<f64>, eta: f64, t: f64, c: f64) -> bool {
    stability_margin(form, q, eta, t, c) >= PSD_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleInterval {
    pub t_min: f64,
    pub t_max: f64,
}

/// Largest interval of `T ∈ (0, t_cap]` on which the stability condition
/// holds with `c = T²`, or `None` when no sampled period is stable.
pub fn feasible_t_interval(
    form: &StabilityForm,
    q: &DMatrix<f64>,
    eta: f64,
    t_cap: f64,
) -> Option<FeasibleInterval> {
    let holds = |t: f64| stability_holds(form, q, eta, t, t * t);
    const POINTS: usize = 4000;
    let lo_exp = (t_cap * 1e-9).ln();
    let hi_exp = t_cap.ln();
    let grid: Vec<f64> = (0..POINTS)
        .map(|i| (lo_exp + (hi_exp - lo_exp) * i as f64 / (POINTS - 1) as f64).exp())
        .collect();
    let ok: Vec<bool> = grid.iter().map(|&t| holds(t)).collect();

    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < POINTS {
        if ok[i] {
            let start = i;
            while i + 1 < POINTS && ok[i + 1] {
                i += 1;
            }
            if best.is_none_or(|(s, e)| i - start > e - s) {
                best = Some((start, i));
            }
        }
        i += 1;
    }
    let (start, end) = best?;

    let bisect = |mut good: f64, mut bad: f64| {
        while (good - bad).abs() > 1e-10 * good.abs().max(bad.abs()) {
            let mid = 0.5 * (good + bad);
            if holds(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let t_min = if start == 0 { grid[0] } else { bisect(grid[start], grid[start - 1]) };
    let t_max = if end == POINTS - 1 { t_cap } else { bisect(grid[end], grid[end + 1]) };
    Some(FeasibleInterval { t_min, t_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `n[i] ~ N(0, R)` regardless of the period.
    PerSample,
    /// `R` is a continuous-time intensity integrated over one period.
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub mode: DiscretizationMode,
    pub noise: NoiseModel,
    pub x0_radius: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            mode: DiscretizationMode::Exact,
            noise: NoiseModel::PerSample,
            x0_radius: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    /// `outages[i]` is true when the transition from sample i used the open loop.
    pub outages: Vec<bool>,
    pub cost: Vec<f64>,
}

/// Covariance of the per-sample disturbance for the given model.
pub fn sample_noise_covariance(plant: &PlantModel, period: f64, opts: &SimOptions) -> DMatrix<f64> {
    match (opts.noise, opts.mode) {
        (NoiseModel::PerSample, _) => plant.r.clone(),
        (NoiseModel::Integrated, DiscretizationMode::FirstOrder) => &plant.r * period,
        (NoiseModel::Integrated, DiscretizationMode::Exact) => {
            // Van Loan: exp([[-A, R], [0, Aᵀ]] T) = [[·, F12], [0, F22]], W = F22ᵀ F12.
            let n = plant.dim();
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&(-&plant.a * period));
            m.view_mut((0, n), (n, n)).copy_from(&(&plant.r * period));
            m.view_mut((n, n), (n, n)).copy_from(&(plant.a.transpose() * period));
            let e = expm(&m);
            let f12 = e.view((0, n), (n, n)).into_owned();
            let f22 = e.view((n, n), (n, n)).into_owned();
            symmetrize(&(f22.transpose() * f12))
        }
    }
}

pub fn simulate_closed_loop(
    plant: &PlantModel,
    period: f64,
    outage: f64,
    horizon: usize,
    seed: u64,
) -> Trajectory {
    simulate_closed_loop_with(plant, period, outage, horizon, seed, &SimOptions::default())
}

/// Simulates `horizon` transitions from a random start on the sphere of
/// radius `opts.x0_radius`. Every step consumes one uniform draw and `dim`
/// normal draws whatever the outcome, so runs sharing a seed use common
/// random numbers.
pub fn simulate_closed_loop_with(
    plant: &PlantModel,
    period: f64,
    outage: f64,
    horizon: usize,
    seed: u64,
    opts: &SimOptions,
) -> Trajectory {
    let n = plant.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let norm = x0.norm();
    if norm > 0.0 {
        x0 *= opts.x0_radius / norm;
    }
    run(plant, period, outage, x0, horizon, &mut rng, opts)
}

/// Simulates `horizon` transitions from a given state.
pub fn simulate_from(
    plant: &PlantModel,
    period: f64,
    outage: f64,
    x0: DVector<f64>,
    horizon: usize,
    seed: u64,
    opts: &SimOptions,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run(plant, period, outage, x0, horizon, &mut rng, opts)
}

fn run(
    plant: &PlantModel,
    period: f64,
    outage: f64,
    x0: DVector<f64>,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    opts: &SimOptions,
) -> Trajectory {
    let n = plant.dim();
    let dyn_ = discretize(plant, period, opts.mode);
    let closed = dyn_.closed_loop(&plant.k_fb);
    let open = dyn_.gamma.clone();
    let noise_factor = psd_sqrt(&sample_noise_covariance(plant, period, opts));
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outages = Vec::with_capacity(horizon);
    let mut cost = Vec::with_capacity(horizon + 1);
    cost.push(x0.norm_squared());
    states.push(x0);
    for i in 0..horizon {
        let lost = rng.random::<f64>() < outage;
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let next = if lost { &open * &states[i] } else { &closed * &states[i] } + &noise_factor * z;
        cost.push(next.norm_squared());
        outages.push(lost);
        states.push(next);
    }
    Trajectory { states, outages, cost }
}

/// `Σ_k (Σ_{n=1..N} ‖x_k[n]‖²) / N`.
pub fn average_control_cost(trajectories: &[Trajectory], n_samples: usize) -> f64 {
    if n_samples == 0 {
        return 0.0;
    }
    trajectories
        .iter()
        .map(|t| t.cost.iter().skip(1).take(n_samples).sum::<f64>() / n_samples as f64)
        .sum()
}

/// Rows `(plant, sample, x0, x1, ..., sq_norm, outage)`; the outage flag
/// marks whether the transition into that sample was open loop.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = trajectories.first().map_or(0, |t| t.states[0].len());
    let mut header = vec!["plant".to_string(), "sample".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.push("sq_norm".into());
    header.push("outage".into());
    w.write_record(&header)?;
    for (k, traj) in trajectories.iter().enumerate() {
        for (i, x) in traj.states.iter().enumerate() {
            let mut row = vec![k.to_string(), i.to_string()];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", traj.cost[i]));
            let flag = i > 0 && traj.outages[i - 1];
            row.push(u8::from(flag).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    fn scalar_like(kappa: f64, eta: f64) -> PlantModel {
        PlantModel::new(DMatrix::zeros(2, 2), eye(2), eye(2), eye(2), eye(2) * kappa, eta).unwrap()
    }

    #[test]
    fn zero_drift_discretizes_to_identity() {
        let p = scalar_like(1.0, 0.5);
        for mode in [DiscretizationMode::Exact, DiscretizationMode::FirstOrder] {
            let d = discretize(&p, 0.3, mode);
            assert!(max_abs(&(d.gamma - eye(2))) < 1e-15);
            assert!(max_abs(&(d.lambda - eye(2) * 0.3)) < 1e-15);
        }
    }

    #[test]
    fn jordan_block_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 10.0).unwrap();
        let d = discretize(&p, 0.1, DiscretizationMode::Exact);
        let e = 0.1f64.exp();
        let expected = DMatrix::from_row_slice(2, 2, &[e, 0.1 * e, 0.0, e]);
        assert!(max_abs(&(d.gamma - expected)) < 1e-13);
    }

    #[test]
    fn first_order_error_is_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 10.0).unwrap();
        let err = |t: f64| {
            let e = discretize(&p, t, DiscretizationMode::Exact);
            let f = discretize(&p, t, DiscretizationMode::FirstOrder);
            (e.gamma - f.gamma).norm()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn scalar_form_matches_hand_substitution() {
        let kappa = 3.0;
        let form = stability_matrices(&scalar_like(kappa, 0.5), 0.0);
        assert!(max_abs(&(form.upsilon - eye(2) * (2.0 * kappa))) < 1e-14);
        assert!(max_abs(&(form.phi + eye(2) * (kappa * kappa))) < 1e-14);
    }

    #[test]
    fn gain_free_form() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -0.2, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let p = PlantModel::new(a.clone(), eye(2), q.clone(), eye(2), DMatrix::zeros(2, 2), 0.9).unwrap();
        let form = stability_matrices(&p, 0.0);
        let ups = -(a.transpose() * &q + &q * &a);
        let phi = -(a.transpose() * &q * &a);
        assert!(max_abs(&(form.upsilon.clone() - ups)) < 1e-14);
        assert!(max_abs(&(form.phi.clone() - phi)) < 1e-14);
        assert_eq!(form.phi.clone() - form.phi.transpose(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn tiny_period_is_unstable() {
        let p = scalar_like(10.0, 0.8);
        let form = stability_matrices(&p, 0.0);
        assert!(!stability_holds(&form, &p.q, p.eta, 1e-9, 1e-18));
    }

    #[test]
    fn interval_for_eta_08_kappa_10() {
        let p = scalar_like(10.0, 0.8);
        let form = stability_matrices(&p, 0.0);
        let iv = feasible_t_interval(&form, &p.q, p.eta, 1.0).unwrap();
        assert!((iv.t_min - 0.010557).abs() < 1e-5);
        assert!((iv.t_max - 0.189443).abs() < 1e-5);
    }

    #[test]
    fn unstable_open_loop_without_gain_has_no_interval() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = PlantModel::new(a, eye(2), eye(2), eye(2), DMatrix::zeros(2, 2), 0.8).unwrap();
        let form = stability_matrices(&p, 0.0);
        assert!(feasible_t_interval(&form, &p.q, p.eta, 1.0).is_none());
    }

    #[test]
    fn noiseless_origin_stays_put() {
        let mut p = scalar_like(10.0, 0.8);
        p.r = DMatrix::zeros(2, 2);
        let opts = SimOptions { x0_radius: 0.0, ..SimOptions::default() };
        let t = simulate_closed_loop_with(&p, 0.01, 0.3, 50, 1, &opts);
        assert_eq!(t.states.len(), 51);
        assert!(t.cost.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn full_outage_follows_open_loop_powers() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let mut p = PlantModel::with_kappa(a, eye(2), eye(2), eye(2), 0.8, 10.0).unwrap();
        p.r = DMatrix::zeros(2, 2);
        let opts = SimOptions { x0_radius: 1.0, ..SimOptions::default() };
        let t = simulate_closed_loop_with(&p, 0.1, 1.0, 10, 3, &opts);
        let g = discretize(&p, 0.1, DiscretizationMode::Exact).gamma;
        let mut x = t.states[0].clone();
        for i in 1..=10 {
            x = &g * x;
            assert!((&t.states[i] - &x).norm() < 1e-12 * x.norm());
        }
        assert!(t.outages.iter().all(|&o| o));
    }

    #[test]
    fn cost_arithmetic() {
        let mk = |x: [f64; 2]| Trajectory {
            states: vec![DVector::from_row_slice(&x); 4],
            outages: vec![false; 3],
            cost: vec![x[0] * x[0] + x[1] * x[1]; 4],
        };
        assert_eq!(average_control_cost(&[mk([1.0, 0.0])], 3), 1.0);
        assert_eq!(average_control_cost(&[mk([1.0, 0.0]), mk([0.0, 2.0])], 3), 5.0);
        assert_eq!(average_control_cost(&[mk([0.0, 0.0])], 3), 0.0);
    }

    #[test]
    fn van_loan_matches_quadrature() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = PlantModel::with_kappa(a.clone(), eye(2), eye(2), eye(2), 0.8, 10.0).unwrap();
        let opts = SimOptions { noise: NoiseModel::Integrated, ..SimOptions::default() };
        let w = sample_noise_covariance(&p, 0.2, &opts);
        let steps = 2000;
        let h = 0.2 / steps as f64;
        let mut acc = DMatrix::zeros(2, 2);
        for i in 0..steps {
            let e = expm(&(&a * ((i as f64 + 0.5) * h)));
            acc += &e * e.transpose() * h;
        }
        assert!(max_abs(&(w - acc)) < 1e-6);
    }

    #[test]
    fn csv_export_has_one_row_per_state() {
        let p = scalar_like(10.0, 0.8);
        let t = simulate_closed_loop(&p, 0.01, 0.1, 5, 9);
        let mut buf = Vec::new();
        write_trajectories_csv(&[t.clone(), t], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 6);
        assert!(text.starts_with("plant,sample,x0,x1,sq_norm,outage"));
    }
}
