//! Successive convex approximation for the joint association, power and
//! TDMA time allocation problem.
//!
//! Two block subproblems are compiled into [`ConvexProgram`]s:
//! the (t, α) block with fixed powers and the (t, p) block with a fixed
//! association. Each is iterated to a fixed point by [`sca_loop`], the two
//! alternate in [`alternating_optimize`], and the relaxed association is
//! then rounded, repaired and refined.
//!
//! Programs use milliseconds as the time unit; the state stores seconds.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::comms::{self, LOG2_E};
use crate::config::Scenario;
use crate::control::{feasible_t_interval, stability_margin, stability_matrices, FeasibleInterval, StabilityForm};
use crate::convex::{self, check_solution, ConvexProgram, SmoothConvex, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, split_definite};
use crate::model::{effective_gains, generate_channels, AssociationMatrix, GainTensors, PowerAllocation, TimeAllocation};

const MS: f64 = 1e-3;
/// Upper limit on any slot or period.
pub const T_CAP_S: f64 = 1.0;
/// Smallest slot length; slots of BSs without plants are held here.
pub const SLOT_FLOOR_S: f64 = 1e-6;
/// Relative duality gap at which a surrogate counts as solved.
const SURROGATE_GAP: f64 = 1e-8;
/// Feasibility tolerance of the exact validator.
pub const VALIDATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// `2M+1` slots: per-BS uplink, shared compute, per-BS downlink.
    Tdma,
    /// Three slots; BSs share the band, each plant gets `B0/|K_m|`.
    Fdma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    pub inner_tol: f64,
    pub max_inner: usize,
    pub outer_tol: f64,
    pub max_outer: usize,
}

impl Default for ScaOptions {
    fn default() -> Self {
        ScaOptions {
            inner_tol: 1e-4,
            max_inner: 50,
            outer_tol: 1e-4,
            max_outer: 10,
        }
    }
}

/// A scenario with its channel gains and the derived stability data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub gains: GainTensors,
    pub protocol: Protocol,
    pub options: ScaOptions,
    pub form: StabilityForm,
    pub interval: FeasibleInterval,
    phi_pos: Option<DMatrix<f64>>,
    phi_neg: Option<DMatrix<f64>>,
    /// `log2(e)·Q⁻¹(ε_th)`: required α-weighted rate margin per plant.
    q_target: f64,
}

impl Problem {
    pub fn new(scenario: Scenario, gains: GainTensors, protocol: Protocol, options: ScaOptions) -> Result<Self> {
        let (m, k) = (scenario.topology.num_bs, scenario.topology.num_plants);
        if gains.num_bs() != m || gains.num_plants() != k {
            return Err(Error::Program(format!(
                "gain tensors are {}x{}, scenario has {m} BSs and {k} plants",
                gains.num_bs(),
                gains.num_plants()
            )));
        }
        let eps = scenario.network.outage_threshold;
        let plant = &scenario.plant;
        let form = stability_matrices(plant, eps);
        let interval = feasible_t_interval(&form, &plant.q, plant.eta, T_CAP_S).ok_or_else(|| {
            Error::Initialization("no sample period in (0, 1 s] satisfies the stability condition".into())
        })?;
        let (pos, neg) = split_definite(&form.phi);
        let scale = max_abs(&form.phi).max(1e-300);
        let keep = |m: DMatrix<f64>| (max_abs(&m) > 1e-14 * scale).then_some(m);
        let q_target = LOG2_E * comms::q_inv(eps)?;
        Ok(Problem {
            phi_pos: keep(pos),
            phi_neg: keep(neg),
            scenario,
            gains,
            protocol,
            options,
            form,
            interval,
            q_target,
        })
    }

    /// Draws channels from the scenario seed and builds the problem.
    pub fn from_scenario(scenario: Scenario, protocol: Protocol, options: ScaOptions) -> Result<Self> {
        scenario.topology.validate()?;
        scenario.network.validate(&scenario.topology)?;
        let channels = generate_channels(&scenario.topology, &scenario.network);
        let gains = effective_gains(&channels)?;
        Problem::new(scenario, gains, protocol, options)
    }

    pub fn num_bs(&self) -> usize {
        self.scenario.topology.num_bs
    }

    pub fn num_plants(&self) -> usize {
        self.scenario.topology.num_plants
    }

    pub fn q_target(&self) -> f64 {
        self.q_target
    }

    /// Per-link bandwidth at each BS for the given association.
    pub fn bandwidths(&self, alpha: &AssociationMatrix) -> Vec<f64> {
        let b0 = self.scenario.network.bandwidth_hz;
        (0..self.num_bs())
            .map(|m| match self.protocol {
                Protocol::Tdma => b0,
                Protocol::Fdma => b0 / (alpha.row_sum(m) - 1e-6).ceil().max(1.0),
            })
            .collect()
    }

    fn noise(&self, bandwidths: &[f64]) -> Vec<f64> {
        bandwidths.iter().map(|&b| self.scenario.network.noise_power_over(b)).collect()
    }

    /// Exact uplink and downlink SINRs; interferers are the other plants
    /// with nonzero association at the same BS.
    pub fn sinrs(&self, alpha: &AssociationMatrix, power: &PowerAllocation) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let noise = self.noise(&self.bandwidths(alpha));
        (
            comms::uplink_sinr(&power.up, &self.gains, alpha, &noise),
            comms::downlink_sinr(&power.down, &self.gains, alpha, &noise),
        )
    }

    /// Period implied by the slot lengths under the protocol.
    pub fn period_of(&self, up: &[f64], compute: f64, down: &[f64]) -> f64 {
        match self.protocol {
            Protocol::Tdma => up.iter().sum::<f64>() + compute + down.iter().sum::<f64>(),
            Protocol::Fdma => max_of(up) + compute + max_of(down),
        }
    }

    /// Time during which BS `m` can compute.
    pub fn compute_window(&self, time: &TimeAllocation, m: usize) -> f64 {
        match self.protocol {
            Protocol::Tdma => time.tdma_compute_window(m),
            Protocol::Fdma => time.compute,
        }
    }

    fn load(&self, alpha: &AssociationMatrix, m: usize) -> f64 {
        (0..self.num_plants())
            .map(|k| alpha.get(m, k) * self.scenario.network.compute_cycles(k))
            .sum()
    }

    fn stability_margin_at(&self, period: f64) -> f64 {
        let plant = &self.scenario.plant;
        stability_margin(&self.form, &plant.q, plant.eta, period, period * period)
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

/// Range of the rate margin over slots in `[SLOT_FLOOR_S, T_CAP_S]`,
/// widened by one; the box for margin auxiliaries.
fn margin_range(gamma: f64, bits: f64, bandwidth_hz: f64) -> (f64, f64) {
    let lo = rate_margin(gamma, SLOT_FLOOR_S, bits, bandwidth_hz);
    let hi = rate_margin(gamma, T_CAP_S, bits, bandwidth_hz);
    (lo - 1.0, hi + 1.0)
}

/// Rate margin `√n·log2(1+γ) − λ/√n` with blocklength `n = t·B`.
pub fn rate_margin(gamma: f64, slot_s: f64, bits: f64, bandwidth_hz: f64) -> f64 {
    let n = (slot_s * bandwidth_hz).sqrt();
    n * (1.0 + gamma).log2() - bits / n
}

/// Linearized lower bound of the product `xy = (ρx)(y/ρ)` around
/// `(x0, y0)`: `¼[(ρx+y/ρ)²]_lin − ¼(ρx−y/ρ)²`, exact at the expansion
/// point for every `ρ > 0`.
pub fn product_lower_bound(x0: f64, y0: f64, rho: f64, x: f64, y: f64) -> f64 {
    let w0 = rho * x0 + y0 / rho;
    let (v, u) = (rho * x + y / rho, rho * x - y / rho);
    0.25 * (2.0 * w0 * v - w0 * w0) - 0.25 * u * u
}

/// Factor balance `ρ = √(|y0|/|x0|)` that makes both scaled factors equal in
/// magnitude at the expansion point.
pub fn balance(x0: f64, y0: f64) -> f64 {
    let r = (y0.abs() / x0.abs()).sqrt();
    if r.is_finite() && r > 0.0 {
        r.clamp(1e-4, 1e4)
    } else {
        1.0
    }
}

/// Iterate of the block-coordinate SCA. Times in seconds, `c` in s².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub alpha: AssociationMatrix,
    pub power: PowerAllocation,
    pub time: TimeAllocation,
    pub c: f64,
    pub beta_up: Vec<Vec<f64>>,
    pub beta_down: Vec<Vec<f64>>,
    /// Spectral-efficiency auxiliaries, bits/s/Hz.
    pub d_up: Vec<Vec<f64>>,
    pub d_down: Vec<Vec<f64>>,
    /// Square-root-time auxiliaries, √s.
    pub tau_up: Vec<f64>,
    pub tau_down: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub history: Vec<f64>,
}

impl SolverState {
    pub fn period(&self) -> f64 {
        self.time.period
    }

    fn active(&self, m: usize, k: usize) -> bool {
        self.alpha.get(m, k) > 0.0
    }

    fn bs_active(&self, m: usize) -> bool {
        self.alpha.alpha[m].iter().any(|&a| a > 0.0)
    }

    /// Resets every auxiliary variable to its defining value.
    pub fn reset_auxiliaries(&mut self, problem: &Problem) {
        let (gu, gd) = problem.sinrs(&self.alpha, &self.power);
        let bw = problem.bandwidths(&self.alpha);
        let net = &problem.scenario.network;
        for m in 0..problem.num_bs() {
            for k in 0..problem.num_plants() {
                self.beta_up[m][k] = rate_margin(gu[m][k], self.time.up[m], net.bits_uplink[k], bw[m]);
                self.beta_down[m][k] = rate_margin(gd[m][k], self.time.down[m], net.bits_downlink[k], bw[m]);
                self.d_up[m][k] = (1.0 + gu[m][k]).log2();
                self.d_down[m][k] = (1.0 + gd[m][k]).log2();
            }
            self.tau_up[m] = self.time.up[m].sqrt();
            self.tau_down[m] = self.time.down[m].sqrt();
        }
        self.c = self.time.period * self.time.period;
    }

    /// α-weighted rate margins per plant, uplink and downlink, at the
    /// exact SINRs.
    pub fn plant_margins(&self, problem: &Problem) -> (Vec<f64>, Vec<f64>) {
        plant_margins(problem, &self.alpha, &self.power, &self.time.up, &self.time.down)
    }
}

fn plant_margins(
    problem: &Problem,
    alpha: &AssociationMatrix,
    power: &PowerAllocation,
    up: &[f64],
    down: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (gu, gd) = problem.sinrs(alpha, power);
    let bw = problem.bandwidths(alpha);
    let net = &problem.scenario.network;
    let mut ru = vec![0.0; problem.num_plants()];
    let mut rd = vec![0.0; problem.num_plants()];
    for k in 0..problem.num_plants() {
        for m in 0..problem.num_bs() {
            let a = alpha.get(m, k);
            if a > 0.0 {
                ru[k] += a * rate_margin(gu[m][k], up[m], net.bits_uplink[k], bw[m]);
                rd[k] += a * rate_margin(gd[m][k], down[m], net.bits_downlink[k], bw[m]);
            }
        }
    }
    (ru, rd)
}

/// Nearest-BS association; softened to 0.9 on the nearest BS with the
/// remaining mass spread evenly, unless `M = 1` or `K = 1`.
pub fn initial_association(problem: &Problem, soften: bool) -> AssociationMatrix {
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let nearest: Vec<usize> = (0..k_count).map(|k| problem.scenario.topology.nearest_bs(k)).collect();
    let mut alpha = AssociationMatrix::from_assignment(m_count, &nearest);
    if soften && m_count > 1 && k_count > 1 {
        let rest = 0.1 / (m_count - 1) as f64;
        for k in 0..k_count {
            for m in 0..m_count {
                alpha.alpha[m][k] = if m == nearest[k] { 0.9 } else { rest };
            }
        }
    }
    alpha
}

/// How the downlink budget is split before power optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownlinkSplit {
    /// `P_m/K` on every link.
    PerPlant,
    /// `P_m/Σ_k α_{m,k}` on every link with nonzero α.
    RowSum,
}

/// Full uplink power `P̄_k` and an equal downlink split on active links.
pub fn equal_power(problem: &Problem, alpha: &AssociationMatrix, split: DownlinkSplit) -> PowerAllocation {
    let net = &problem.scenario.network;
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let mut up = vec![vec![0.0; k_count]; m_count];
    let mut down = vec![vec![0.0; k_count]; m_count];
    for m in 0..m_count {
        let share = match split {
            DownlinkSplit::PerPlant => net.downlink_power_budget_w[m] / k_count as f64,
            DownlinkSplit::RowSum => net.downlink_power_budget_w[m] / alpha.row_sum(m).max(1e-12),
        };
        for k in 0..k_count {
            if alpha.get(m, k) > 0.0 {
                up[m][k] = net.uplink_power_cap_w[k];
                down[m][k] = share;
            }
        }
    }
    PowerAllocation { up, down }
}

/// Uplink powers scaled down so that, at each BS, no plant is received
/// stronger than the weakest plant whose largest association is that BS.
pub fn balanced_uplink(problem: &Problem, alpha: &AssociationMatrix, power: &PowerAllocation) -> PowerAllocation {
    let net = &problem.scenario.network;
    let assign = alpha.argmax();
    let mut out = power.clone();
    for m in 0..problem.num_bs() {
        let floor = (0..problem.num_plants())
            .filter(|&k| assign[k] == m)
            .map(|k| net.uplink_power_cap_w[k] * problem.gains.xi[m][k][k])
            .fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            continue;
        }
        for k in 0..problem.num_plants() {
            if out.up[m][k] > 0.0 {
                out.up[m][k] = out.up[m][k].min(floor / problem.gains.xi[m][k][k]);
            }
        }
    }
    out
}

fn empty_state(problem: &Problem, alpha: AssociationMatrix, power: PowerAllocation) -> SolverState {
    let (m, k) = (problem.num_bs(), problem.num_plants());
    SolverState {
        alpha,
        power,
        time: TimeAllocation {
            up: vec![SLOT_FLOOR_S; m],
            compute: SLOT_FLOOR_S,
            down: vec![SLOT_FLOOR_S; m],
            period: 0.0,
        },
        c: 0.0,
        beta_up: vec![vec![0.0; k]; m],
        beta_down: vec![vec![0.0; k]; m],
        d_up: vec![vec![0.0; k]; m],
        d_down: vec![vec![0.0; k]; m],
        tau_up: vec![0.0; m],
        tau_down: vec![0.0; m],
        outer_iterations: 0,
        inner_iterations: 0,
        history: Vec::new(),
    }
}

/// Smallest common scale `θ ∈ [lo, hi]` with `ok(θ)`, by bisection.
fn bisect_scale(lo: f64, hi: f64, ok: impl Fn(f64) -> bool) -> Option<f64> {
    if !ok(hi) {
        return None;
    }
    if ok(lo) {
        return Some(lo);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = if a > 0.0 { (a * b).sqrt() } else { 0.5 * (a + b) };
        if ok(mid) {
            b = mid;
        } else {
            a = mid;
        }
        if b - a <= 1e-12 * b {
            break;
        }
    }
    Some(b)
}

/// Lengthens the communication slots (common factor per direction) until
/// every plant meets `factor·q_target`, sets the compute slot to the
/// smallest feasible value and raises the period into the stable window.
/// A state that already satisfies everything is returned unchanged.
pub fn restore_feasibility(problem: &Problem, state: &SolverState, factor: f64) -> Result<SolverState> {
    if state_is_feasible(problem, state, factor) {
        return Ok(state.clone());
    }
    let mut s = state.clone();
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let target = factor * problem.q_target;
    for m in 0..m_count {
        if !s.bs_active(m) {
            s.time.up[m] = SLOT_FLOOR_S;
            s.time.down[m] = SLOT_FLOOR_S;
        } else {
            s.time.up[m] = s.time.up[m].max(SLOT_FLOOR_S);
            s.time.down[m] = s.time.down[m].max(SLOT_FLOOR_S);
        }
    }

    for uplink in [true, false] {
        let base: Vec<f64> = if uplink { s.time.up.clone() } else { s.time.down.clone() };
        let scaled = |theta: f64| -> Vec<f64> {
            (0..m_count)
                .map(|m| if s.bs_active(m) { (base[m] * theta).min(T_CAP_S) } else { SLOT_FLOOR_S })
                .collect()
        };
        let worst = |slots: &[f64]| -> (usize, f64) {
            let (ru, rd) = if uplink {
                plant_margins(problem, &s.alpha, &s.power, slots, &s.time.down)
            } else {
                plant_margins(problem, &s.alpha, &s.power, &s.time.up, slots)
            };
            let r = if uplink { ru } else { rd };
            (0..k_count).map(|k| (k, r[k] - target)).fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
        };
        if worst(&base).1 >= 0.0 {
            continue;
        }
        let hi = T_CAP_S / base.iter().cloned().fold(f64::INFINITY, f64::min).max(SLOT_FLOOR_S);
        match bisect_scale(1.0, hi, |theta| worst(&scaled(theta)).1 >= 0.0) {
            Some(theta) => {
                let slots = scaled(theta);
                if uplink {
                    s.time.up = slots;
                } else {
                    s.time.down = slots;
                }
            }
            None => {
                let (k, _) = worst(&scaled(hi));
                let dir = if uplink { "uplink" } else { "downlink" };
                return Err(Error::Infeasible {
                    constraint: format!("{dir} reliability of plant {k}"),
                    detail: format!("outage target unreachable with slots up to {T_CAP_S} s"),
                });
            }
        }
    }

    let net = &problem.scenario.network;
    let mut compute = SLOT_FLOOR_S;
    for m in 0..m_count {
        let need = problem.load(&s.alpha, m) / net.cpu_freq_hz[m];
        let other = match problem.protocol {
            Protocol::Tdma => s.time.up[m + 1..].iter().sum::<f64>() + s.time.down[..m].iter().sum::<f64>(),
            Protocol::Fdma => 0.0,
        };
        compute = compute.max((need - other) * (1.0 + 1e-9));
    }
    s.time.compute = compute;
    let mut period = problem.period_of(&s.time.up, s.time.compute, &s.time.down);
    let (t_min, t_max) = (problem.interval.t_min, problem.interval.t_max);
    if period < t_min * (1.0 + 1e-7) {
        s.time.compute += t_min * (1.0 + 1e-7) - period;
        period = problem.period_of(&s.time.up, s.time.compute, &s.time.down);
    }
    if period > t_max || period > T_CAP_S {
        return Err(Error::Infeasible {
            constraint: "stability".into(),
            detail: format!("period {period:.6e} s exceeds the stable limit {t_max:.6e} s"),
        });
    }
    s.time.period = period;
    s.reset_auxiliaries(problem);
    Ok(s)
}

/// All relaxed constraints hold at `factor·q_target` (with exact SINRs).
fn state_is_feasible(problem: &Problem, state: &SolverState, factor: f64) -> bool {
    if state.time.period <= 0.0 {
        return false;
    }
    let target = factor * problem.q_target;
    let (ru, rd) = state.plant_margins(problem);
    if ru.iter().chain(&rd).any(|&r| r < target) {
        return false;
    }
    let net = &problem.scenario.network;
    for m in 0..problem.num_bs() {
        if problem.load(&state.alpha, m) > net.cpu_freq_hz[m] * problem.compute_window(&state.time, m) {
            return false;
        }
    }
    let p = problem.period_of(&state.time.up, state.time.compute, &state.time.down);
    state.time.compute >= SLOT_FLOOR_S
        && (p - state.time.period).abs() <= 1e-9 * p
        && problem.stability_margin_at(state.time.period) > 0.0
}

/// Initial point: slots sized so that every plant holds twice the required
/// rate margin, minimal compute slot, period inside the stable window and
/// auxiliaries at their defining values.
pub fn initialize(problem: &Problem, alpha: AssociationMatrix, power: PowerAllocation) -> Result<SolverState> {
    let mut s = empty_state(problem, alpha, power);
    s.time.period = problem.period_of(&s.time.up, s.time.compute, &s.time.down);
    restore_feasibility(problem, &s, 2.0).map_err(init_error)
}

/// [`initialize`], retrying with [`balanced_uplink`] powers when the given
/// powers cannot reach the reliability target.
pub fn initialize_adaptive(problem: &Problem, alpha: AssociationMatrix, power: PowerAllocation) -> Result<SolverState> {
    match initialize(problem, alpha.clone(), power.clone()) {
        Err(Error::Initialization(first)) => {
            let balanced = balanced_uplink(problem, &alpha, &power);
            initialize(problem, alpha, balanced).map_err(|e| match e {
                Error::Initialization(second) => Error::Initialization(format!("{first}; with balanced uplink: {second}")),
                other => other,
            })
        }
        other => other,
    }
}

fn init_error(e: Error) -> Error {
    match e {
        Error::Infeasible { constraint, detail } => {
            Error::Initialization(format!("no feasible initial period: {constraint}: {detail}"))
        }
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Smooth atoms

/// `β − r·√(a t) + λ/√(a t) ≤ 0` over `[β, t]`.
#[derive(Debug)]
struct MarginAtom {
    vars: [usize; 2],
    rate: f64,
    bits: f64,
    scale: f64,
}

impl SmoothConvex for MarginAtom {
    fn vars(&self) -> &[usize] {
        &self.vars
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        if !(x[1] > 0.0) {
            return None;
        }
        let s = (self.scale * x[1]).sqrt();
        Some(x[0] - self.rate * s + self.bits / s)
    }

    fn derivatives(&self, x: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
        let v = self.value(x)?;
        let s = (self.scale * x[1]).sqrt();
        let ds = self.scale / (2.0 * s);
        let dds = -self.scale * self.scale / (4.0 * s * s * s);
        let f_s = -self.rate - self.bits / (s * s);
        let f_ss = 2.0 * self.bits / (s * s * s);
        let mut h = DMatrix::zeros(2, 2);
        h[(1, 1)] = f_ss * ds * ds + f_s * dds;
        Some((v, vec![1.0, f_s * ds], h))
    }
}

/// `d − log2(1 + Σ w_i p_i) + Σ lin_i p_i + constant ≤ 0` over `[d, p...]`.
#[derive(Debug)]
struct LogRateAtom {
    vars: Vec<usize>,
    weight: Vec<f64>,
    lin: Vec<f64>,
    constant: f64,
}

impl SmoothConvex for LogRateAtom {
    fn vars(&self) -> &[usize] {
        &self.vars
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let z = 1.0 + self.weight.iter().zip(&x[1..]).map(|(w, p)| w * p).sum::<f64>();
        if !(z > 0.0) {
            return None;
        }
        let lin: f64 = self.lin.iter().zip(&x[1..]).map(|(c, p)| c * p).sum();
        Some(x[0] - z.log2() + lin + self.constant)
    }

    fn derivatives(&self, x: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
        let v = self.value(x)?;
        let z = 1.0 + self.weight.iter().zip(&x[1..]).map(|(w, p)| w * p).sum::<f64>();
        let n = self.vars.len();
        let mut g = vec![0.0; n];
        g[0] = 1.0;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            g[i + 1] = -LOG2_E * self.weight[i] / z + self.lin[i];
            for j in 0..n - 1 {
                h[(i + 1, j + 1)] = LOG2_E * self.weight[i] * self.weight[j] / (z * z);
            }
        }
        Some((v, g, h))
    }
}

/// `q + Σ_m α_m [λ/s_m + ¼(ρd_m − s_m/ρ)² − ¼((ρd+s/ρ)²)_lin] ≤ 0` over
/// `[s_1, d_1, s_2, d_2, ...]`.
#[derive(Debug)]
struct ReliabilityAtom {
    vars: Vec<usize>,
    alpha: Vec<f64>,
    w0: Vec<f64>,
    rho: Vec<f64>,
    bits: f64,
    target: f64,
}

impl SmoothConvex for ReliabilityAtom {
    fn vars(&self) -> &[usize] {
        &self.vars
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let mut v = self.target;
        for j in 0..self.alpha.len() {
            let (s, d, r, w0) = (x[2 * j], x[2 * j + 1], self.rho[j], self.w0[j]);
            if !(s > 0.0) {
                return None;
            }
            let (u, w) = (r * d - s / r, r * d + s / r);
            v += self.alpha[j] * (self.bits / s + 0.25 * u * u - 0.25 * (2.0 * w0 * w - w0 * w0));
        }
        Some(v)
    }

    fn derivatives(&self, x: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
        let v = self.value(x)?;
        let n = self.vars.len();
        let mut g = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        for j in 0..self.alpha.len() {
            let (s, d, r, w0, a) = (x[2 * j], x[2 * j + 1], self.rho[j], self.w0[j], self.alpha[j]);
            let u = r * d - s / r;
            g[2 * j] = a * (-self.bits / (s * s) - 0.5 * u / r - 0.5 * w0 / r);
            g[2 * j + 1] = a * (0.5 * u * r - 0.5 * w0 * r);
            h[(2 * j, 2 * j)] = a * (2.0 * self.bits / (s * s * s) + 0.5 / (r * r));
            h[(2 * j + 1, 2 * j + 1)] = a * 0.5 * r * r;
            h[(2 * j, 2 * j + 1)] = -a * 0.5;
            h[(2 * j + 1, 2 * j)] = -a * 0.5;
        }
        Some((v, g, h))
    }
}

// ---------------------------------------------------------------------------
// Program construction

#[derive(Debug, Clone, Copy)]
enum Slot {
    Var(usize),
    /// Constant length in ms.
    Fixed(f64),
}

impl Slot {
    fn value(self, x: &[f64]) -> f64 {
        match self {
            Slot::Var(i) => x[i],
            Slot::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Default)]
struct Lin {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Lin {
    fn slot(&mut self, s: Slot, coef: f64) {
        match s {
            Slot::Var(i) => self.terms.push((i, coef)),
            Slot::Fixed(v) => self.constant += coef * v,
        }
    }

    fn var(&mut self, i: usize, coef: f64) {
        self.terms.push((i, coef));
    }

    /// Adds `self ≤ 0`.
    fn leq_zero(self, prog: &mut ConvexProgram, name: String) {
        prog.add_affine(name, self.terms, -self.constant);
    }
}

#[derive(Debug, Default)]
struct Builder {
    prog: ConvexProgram,
    x0: Vec<f64>,
}

impl Builder {
    fn var(&mut self, name: impl Into<String>, lo: f64, hi: f64, init: f64) -> usize {
        self.x0.push(init);
        self.prog.add_var(name, lo, hi)
    }
}

#[derive(Debug, Clone)]
struct TimeVars {
    up: Vec<Slot>,
    down: Vec<Slot>,
    period: usize,
}

/// Per-BS compute load in ms of CPU time: α-variable terms plus constant.
type LoadExpr = (Vec<(usize, f64)>, f64);

impl Problem {
    /// Slot variables, period, compute, floor and stability atoms.
    fn add_time_block(&self, b: &mut Builder, state: &SolverState, loads: &[LoadExpr]) -> Result<TimeVars> {
        let m_count = self.num_bs();
        let floor = SLOT_FLOOR_S / MS;
        let cap = T_CAP_S / MS;
        let mut up = Vec::with_capacity(m_count);
        let mut down = Vec::with_capacity(m_count);
        for m in 0..m_count {
            if state.bs_active(m) {
                up.push(Slot::Var(b.var(format!("t_up[{m}]"), floor, cap, state.time.up[m] / MS)));
                down.push(Slot::Var(b.var(format!("t_down[{m}]"), floor, cap, state.time.down[m] / MS)));
            } else {
                up.push(Slot::Fixed(floor));
                down.push(Slot::Fixed(floor));
            }
        }
        let (max_up, max_down) = match self.protocol {
            Protocol::Tdma => (None, None),
            Protocol::Fdma => (
                Some(b.var("t_up_max", floor, cap, max_of(&state.time.up) / MS)),
                Some(b.var("t_down_max", floor, cap, max_of(&state.time.down) / MS)),
            ),
        };
        let t0 = state.time.period / MS;
        let period = b.var("T", floor * (2 * m_count + 1) as f64, cap, t0);
        b.prog.set_objective(period, 1.0);

        match self.protocol {
            Protocol::Tdma => {
                for (m, load) in loads.iter().enumerate() {
                    let mut e = Lin::default();
                    for &(v, c) in &load.0 {
                        e.var(v, c);
                    }
                    e.constant += load.1;
                    for i in 0..=m {
                        e.slot(up[i], 1.0);
                    }
                    for i in m..m_count {
                        e.slot(down[i], 1.0);
                    }
                    e.var(period, -1.0);
                    e.leq_zero(&mut b.prog, format!("compute[{m}]"));
                }
                let mut e = Lin::default();
                for m in 0..m_count {
                    e.slot(up[m], 1.0);
                    e.slot(down[m], 1.0);
                }
                e.var(period, -1.0);
                e.constant += floor;
                e.leq_zero(&mut b.prog, "compute_floor".into());
            }
            Protocol::Fdma => {
                let (u, d) = (max_up.unwrap(), max_down.unwrap());
                for m in 0..m_count {
                    if let Slot::Var(i) = up[m] {
                        b.prog.add_affine(format!("t_up_max>=t_up[{m}]"), vec![(i, 1.0), (u, -1.0)], 0.0);
                    }
                    if let Slot::Var(i) = down[m] {
                        b.prog.add_affine(format!("t_down_max>=t_down[{m}]"), vec![(i, 1.0), (d, -1.0)], 0.0);
                    }
                }
                for (m, load) in loads.iter().enumerate() {
                    let mut e = Lin::default();
                    for &(v, c) in &load.0 {
                        e.var(v, c);
                    }
                    e.constant += load.1;
                    e.var(u, 1.0);
                    e.var(d, 1.0);
                    e.var(period, -1.0);
                    e.leq_zero(&mut b.prog, format!("compute[{m}]"));
                }
                b.prog.add_affine("compute_floor", vec![(u, 1.0), (d, 1.0), (period, -1.0)], -floor);
            }
        }

        // Stability: Φ⁻ c + Φ⁺ c_lo + Υ T + (η−1)Q ⪰ 0 with c ≥ T² and c_lo
        // below the tangent of T² at the local point.
        let plant = &self.scenario.plant;
        let mut lmi_vars = vec![period];
        let mut lmi_mats = vec![&self.form.upsilon * MS];
        if let Some(neg) = &self.phi_neg {
            let c = b.var("c", 0.0, cap * cap, (state.c / (MS * MS)).max(t0 * t0));
            b.prog.add_quadratic(
                "T^2<=c",
                vec![period, c],
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                vec![0.0, -1.0],
                0.0,
            )?;
            lmi_vars.push(c);
            lmi_mats.push(neg * (MS * MS));
        }
        if let Some(pos) = &self.phi_pos {
            let c_lo = b.var("c_lo", 0.0, cap * cap, t0 * t0);
            b.prog.add_affine("c_lo<=T^2", vec![(c_lo, 1.0), (period, -2.0 * t0)], -t0 * t0);
            lmi_vars.push(c_lo);
            lmi_mats.push(pos * (MS * MS));
        }
        b.prog.add_lmi("stability", lmi_vars, &plant.q * (plant.eta - 1.0), lmi_mats)?;

        Ok(TimeVars { up, down, period })
    }

    fn extract_time(&self, tv: &TimeVars, x: &[f64]) -> TimeAllocation {
        let up: Vec<f64> = tv.up.iter().map(|s| s.value(x) * MS).collect();
        let down: Vec<f64> = tv.down.iter().map(|s| s.value(x) * MS).collect();
        let period = x[tv.period] * MS;
        let compute = match self.protocol {
            Protocol::Tdma => period - up.iter().sum::<f64>() - down.iter().sum::<f64>(),
            Protocol::Fdma => period - max_of(&up) - max_of(&down),
        };
        TimeAllocation {
            up,
            compute,
            down,
            period,
        }
    }
}

/// Options of the (t, α) block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaOptions {
    /// Optimize α; otherwise only the slots are free.
    pub alpha_variable: bool,
    /// Include the downlink budget `Σ_k α p ≤ P_m`.
    pub downlink_budget: bool,
}

#[derive(Debug, Clone)]
struct TaLayout {
    time: TimeVars,
    alpha: Option<Vec<Vec<usize>>>,
    beta_up: Vec<Vec<Option<usize>>>,
    beta_down: Vec<Vec<Option<usize>>>,
    c: Option<usize>,
}

#[derive(Debug, Clone)]
struct PtLayout {
    time: TimeVars,
    p_up: Vec<Vec<Option<usize>>>,
    p_down: Vec<Vec<Option<usize>>>,
    d_up: Vec<Vec<Option<usize>>>,
    d_down: Vec<Vec<Option<usize>>>,
    s_up: Vec<Option<usize>>,
    s_down: Vec<Option<usize>>,
    c: Option<usize>,
}

#[derive(Debug, Clone)]
enum Layout {
    Ta(TaLayout),
    Pt(PtLayout),
}

/// A compiled surrogate and the local point it was built around.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub program: ConvexProgram,
    pub start: Vec<f64>,
    layout: Layout,
}

fn var_named(prog: &ConvexProgram, name: &str) -> Option<usize> {
    prog.var_names.iter().position(|n| n == name)
}

/// Surrogate (P4) of the (t, α) block at the state's local point.
pub fn build_ta_subproblem(problem: &Problem, state: &SolverState, opts: TaOptions) -> Result<Surrogate> {
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let net = &problem.scenario.network;
    let alpha_variable = opts.alpha_variable && m_count > 1;
    let mut b = Builder::default();

    let alpha_vars: Option<Vec<Vec<usize>>> = alpha_variable.then(|| {
        (0..m_count)
            .map(|m| {
                (0..k_count)
                    .map(|k| b.var(format!("alpha[{m}][{k}]"), 0.0, 1.0, state.alpha.get(m, k)))
                    .collect()
            })
            .collect()
    });
    let active = |m: usize, k: usize| alpha_variable || state.active(m, k);

    let loads: Vec<LoadExpr> = (0..m_count)
        .map(|m| {
            let per_ms = 1.0 / (net.cpu_freq_hz[m] * MS);
            match &alpha_vars {
                Some(av) => ((0..k_count).map(|k| (av[m][k], net.compute_cycles(k) * per_ms)).collect(), 0.0),
                None => (Vec::new(), problem.load(&state.alpha, m) * per_ms),
            }
        })
        .collect();
    let time = problem.add_time_block(&mut b, state, &loads)?;

    let (gu, gd) = problem.sinrs(&state.alpha, &state.power);
    let bw = problem.bandwidths(&state.alpha);
    let mut beta_up = vec![vec![None; k_count]; m_count];
    let mut beta_down = vec![vec![None; k_count]; m_count];
    for m in 0..m_count {
        for k in 0..k_count {
            if !active(m, k) {
                continue;
            }
            for (uplink, store) in [(true, &mut beta_up), (false, &mut beta_down)] {
                let (gamma, slot, bits, init, tag) = if uplink {
                    (gu[m][k], time.up[m], net.bits_uplink[k], state.beta_up[m][k], "up")
                } else {
                    (gd[m][k], time.down[m], net.bits_downlink[k], state.beta_down[m][k], "down")
                };
                let (lo, hi) = margin_range(gamma, bits, bw[m]);
                let beta = b.var(format!("beta_{tag}[{m}][{k}]"), lo.min(init - 1.0), hi.max(init + 1.0), init);
                store[m][k] = Some(beta);
                let Slot::Var(t) = slot else {
                    return Err(Error::Program(format!("active link ({m},{k}) has a fixed slot")));
                };
                b.prog.add_smooth(
                    format!("margin_{tag}[{m}][{k}]"),
                    Arc::new(MarginAtom {
                        vars: [beta, t],
                        rate: (1.0 + gamma).log2(),
                        bits,
                        scale: bw[m] * MS,
                    }),
                );
            }
        }
    }

    let target = problem.q_target;
    for k in 0..k_count {
        for (tag, betas, beta0) in [
            ("up", &beta_up, &state.beta_up),
            ("down", &beta_down, &state.beta_down),
        ] {
            let name = format!("reliability_{tag}[{k}]");
            match &alpha_vars {
                Some(av) => {
                    // Σ_m ¼(ρα−β/ρ)² − ½w0(ρα+β/ρ) + ¼w0² + q ≤ 0.
                    let mut vars = Vec::new();
                    let mut q = Vec::new();
                    let mut r = target;
                    let n = 2 * m_count;
                    let mut p = DMatrix::zeros(n, n);
                    for m in 0..m_count {
                        let (a0, b0) = (state.alpha.get(m, k), beta0[m][k]);
                        let rho = balance(a0, b0);
                        let w0 = rho * a0 + b0 / rho;
                        vars.push(av[m][k]);
                        vars.push(betas[m][k].unwrap());
                        q.push(-0.5 * w0 * rho);
                        q.push(-0.5 * w0 / rho);
                        r += 0.25 * w0 * w0;
                        let j = 2 * m;
                        p[(j, j)] = 0.25 * rho * rho;
                        p[(j + 1, j + 1)] = 0.25 / (rho * rho);
                        p[(j, j + 1)] = -0.25;
                        p[(j + 1, j)] = -0.25;
                    }
                    b.prog.add_quadratic(name, vars, p, q, r)?;
                }
                None => {
                    let terms: Vec<(usize, f64)> = (0..m_count)
                        .filter_map(|m| betas[m][k].map(|v| (v, -state.alpha.get(m, k))))
                        .collect();
                    b.prog.add_affine(name, terms, -target);
                }
            }
        }
    }

    if let Some(av) = &alpha_vars {
        for k in 0..k_count {
            b.prog.add_equality(format!("assoc[{k}]"), (0..m_count).map(|m| (av[m][k], 1.0)).collect(), 1.0);
            for m in 0..m_count {
                let p = state.power.up[m][k];
                if p > net.uplink_power_cap_w[k] * (1.0 + 1e-12) {
                    b.prog.add_affine(format!("uplink_cap[{m}][{k}]"), vec![(av[m][k], p)], net.uplink_power_cap_w[k]);
                }
            }
        }
        if opts.downlink_budget {
            for m in 0..m_count {
                let terms = (0..k_count).map(|k| (av[m][k], state.power.down[m][k])).collect();
                b.prog.add_affine(format!("downlink_budget[{m}]"), terms, net.downlink_power_budget_w[m]);
            }
        }
    }

    let c = var_named(&b.prog, "c");
    Ok(Surrogate {
        program: b.prog,
        start: b.x0,
        layout: Layout::Ta(TaLayout {
            time,
            alpha: alpha_vars,
            beta_up,
            beta_down,
            c,
        }),
    })
}

/// Surrogate (P7) of the (t, p) block at the state's local point.
pub fn build_pt_subproblem(problem: &Problem, state: &SolverState) -> Result<Surrogate> {
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let net = &problem.scenario.network;
    let mut b = Builder::default();
    let loads: Vec<LoadExpr> = (0..m_count)
        .map(|m| (Vec::new(), problem.load(&state.alpha, m) / (net.cpu_freq_hz[m] * MS)))
        .collect();
    let time = problem.add_time_block(&mut b, state, &loads)?;
    let bw = problem.bandwidths(&state.alpha);
    let noise = problem.noise(&bw);

    let mut p_up = vec![vec![None; k_count]; m_count];
    let mut p_down = vec![vec![None; k_count]; m_count];
    let mut d_up = vec![vec![None; k_count]; m_count];
    let mut d_down = vec![vec![None; k_count]; m_count];
    let mut s_up = vec![None; m_count];
    let mut s_down = vec![None; m_count];
    for m in 0..m_count {
        if !state.bs_active(m) {
            continue;
        }
        let scale = bw[m] * MS;
        let s_cap = (scale * T_CAP_S / MS).sqrt();
        for (tag, store, slot, tau) in [
            ("up", &mut s_up, time.up[m], state.tau_up[m]),
            ("down", &mut s_down, time.down[m], state.tau_down[m]),
        ] {
            let Slot::Var(t) = slot else { unreachable!("active BS has variable slots") };
            let s = b.var(format!("s_{tag}[{m}]"), 0.0, s_cap, tau * bw[m].sqrt());
            store[m] = Some(s);
            b.prog.add_quadratic(
                format!("sqrt_time_{tag}[{m}]"),
                vec![s, t],
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                vec![0.0, -scale],
                0.0,
            )?;
        }
        for k in 0..k_count {
            if state.active(m, k) {
                p_up[m][k] = Some(b.var(format!("p_up[{m}][{k}]"), 0.0, net.uplink_power_cap_w[k], state.power.up[m][k]));
                p_down[m][k] = Some(b.var(
                    format!("p_down[{m}][{k}]"),
                    0.0,
                    net.downlink_power_budget_w[m],
                    state.power.down[m][k],
                ));
                let snr_up = net.uplink_power_cap_w[k] * problem.gains.xi[m][k][k] / noise[m];
                let snr_down = net.downlink_power_budget_w[m] * problem.gains.zeta[m][k][k] / noise[m];
                let (d0u, d0d) = (state.d_up[m][k], state.d_down[m][k]);
                let hi_up = (1.0 + snr_up).log2().max(d0u) + 1.0;
                let hi_down = (1.0 + snr_down).log2().max(d0d) + 1.0;
                d_up[m][k] = Some(b.var(format!("d_up[{m}][{k}]"), (d0u - 1.0).min(-1.0), hi_up, d0u));
                d_down[m][k] = Some(b.var(format!("d_down[{m}][{k}]"), (d0d - 1.0).min(-1.0), hi_down, d0d));
            }
        }
    }

    // Spectral efficiency with the interference term linearized at p0.
    for m in 0..m_count {
        let members: Vec<usize> = (0..k_count).filter(|&k| state.active(m, k)).collect();
        for &k in &members {
            for (tag, gain, pv, dv, p0) in [
                ("up", &problem.gains.xi, &p_up, &d_up, &state.power.up),
                ("down", &problem.gains.zeta, &p_down, &d_down, &state.power.down),
            ] {
                let mut vars = vec![dv[m][k].unwrap()];
                let mut weight = Vec::new();
                let mut lin = Vec::new();
                let interference0: f64 = members
                    .iter()
                    .filter(|&&i| i != k)
                    .map(|&i| p0[m][i] * gain[m][i][k] / noise[m])
                    .sum();
                let mut constant = (1.0 + interference0).log2();
                for &i in &members {
                    let w = gain[m][i][k] / noise[m];
                    vars.push(pv[m][i].unwrap());
                    weight.push(w);
                    if i == k {
                        lin.push(0.0);
                    } else {
                        let c = LOG2_E * w / (1.0 + interference0);
                        lin.push(c);
                        constant -= c * p0[m][i];
                    }
                }
                b.prog.add_smooth(
                    format!("rate_{tag}[{m}][{k}]"),
                    Arc::new(LogRateAtom {
                        vars,
                        weight,
                        lin,
                        constant,
                    }),
                );
            }
        }
        if let Some(_) = s_down[m] {
            let terms: Vec<(usize, f64)> = members.iter().map(|&k| (p_down[m][k].unwrap(), state.alpha.get(m, k))).collect();
            b.prog.add_affine(format!("downlink_budget[{m}]"), terms, net.downlink_power_budget_w[m]);
        }
    }

    for k in 0..k_count {
        for (tag, s_vars, d_vars, d0, tau0, bits) in [
            ("up", &s_up, &d_up, &state.d_up, &state.tau_up, net.bits_uplink[k]),
            ("down", &s_down, &d_down, &state.d_down, &state.tau_down, net.bits_downlink[k]),
        ] {
            let mut vars = Vec::new();
            let mut alpha = Vec::new();
            let mut w0 = Vec::new();
            let mut rho = Vec::new();
            for m in 0..m_count {
                if state.active(m, k) {
                    let s0 = tau0[m] * bw[m].sqrt();
                    let r = balance(d0[m][k], s0);
                    vars.push(s_vars[m].unwrap());
                    vars.push(d_vars[m][k].unwrap());
                    alpha.push(state.alpha.get(m, k));
                    w0.push(r * d0[m][k] + s0 / r);
                    rho.push(r);
                }
            }
            b.prog.add_smooth(
                format!("reliability_{tag}[{k}]"),
                Arc::new(ReliabilityAtom {
                    vars,
                    alpha,
                    w0,
                    rho,
                    bits,
                    target: problem.q_target,
                }),
            );
        }
    }

    let c = var_named(&b.prog, "c");
    Ok(Surrogate {
        program: b.prog,
        start: b.x0,
        layout: Layout::Pt(PtLayout {
            time,
            p_up,
            p_down,
            d_up,
            d_down,
            s_up,
            s_down,
            c,
        }),
    })
}

impl Surrogate {
    /// State at the program point `x`; variables outside the block are
    /// copied from `base`.
    fn apply(&self, problem: &Problem, base: &SolverState, x: &[f64]) -> SolverState {
        let mut s = base.clone();
        let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
        let pick = |v: Option<usize>, old: f64| v.map_or(old, |i| x[i]);
        match &self.layout {
            Layout::Ta(l) => {
                s.time = problem.extract_time(&l.time, x);
                if let Some(av) = &l.alpha {
                    for m in 0..m_count {
                        for k in 0..k_count {
                            s.alpha.alpha[m][k] = x[av[m][k]];
                        }
                    }
                }
                for m in 0..m_count {
                    for k in 0..k_count {
                        s.beta_up[m][k] = pick(l.beta_up[m][k], s.beta_up[m][k]);
                        s.beta_down[m][k] = pick(l.beta_down[m][k], s.beta_down[m][k]);
                    }
                }
                s.c = l.c.map_or(s.time.period.powi(2), |i| x[i] * MS * MS);
            }
            Layout::Pt(l) => {
                s.time = problem.extract_time(&l.time, x);
                let bw = problem.bandwidths(&s.alpha);
                for m in 0..m_count {
                    for k in 0..k_count {
                        s.power.up[m][k] = pick(l.p_up[m][k], 0.0);
                        s.power.down[m][k] = pick(l.p_down[m][k], 0.0);
                        s.d_up[m][k] = pick(l.d_up[m][k], s.d_up[m][k]);
                        s.d_down[m][k] = pick(l.d_down[m][k], s.d_down[m][k]);
                    }
                    s.tau_up[m] = l.s_up[m].map_or(s.tau_up[m], |i| x[i] / bw[m].sqrt());
                    s.tau_down[m] = l.s_down[m].map_or(s.tau_down[m], |i| x[i] / bw[m].sqrt());
                }
                s.c = l.c.map_or(s.time.period.powi(2), |i| x[i] * MS * MS);
            }
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Iteration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Ta,
    Pt,
}

impl Block {
    pub fn id(self) -> &'static str {
        match self {
            Block::Ta => "ta",
            Block::Pt => "pt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Converged,
    MaxIter,
    /// A later surrogate failed; the last accepted iterate is kept.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer: usize,
    pub inner: usize,
    pub block: String,
    pub period_s: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerHistory {
    pub outer: usize,
    pub block: String,
    /// Period before the first surrogate and after every accepted iterate.
    pub periods: Vec<f64>,
    pub status: LoopStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub inner: Vec<InnerHistory>,
    /// Period before the first alternation and after each one.
    pub outer: Vec<f64>,
}

impl Trace {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outer", "inner", "block", "period_s", "max_violation"])?;
        for r in &self.rows {
            w.write_record([
                r.outer.to_string(),
                r.inner.to_string(),
                r.block.clone(),
                format!("{:.12e}", r.period_s),
                format!("{:.6e}", r.max_violation),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn build(problem: &Problem, block: Block, state: &SolverState, ta: TaOptions) -> Result<Surrogate> {
    match block {
        Block::Ta => build_ta_subproblem(problem, state, ta),
        Block::Pt => build_pt_subproblem(problem, state),
    }
}

/// Iterates one block's surrogate to a fixed point. An iterate that would
/// increase the period is rejected and the loop stops.
pub fn sca_loop(
    problem: &Problem,
    block: Block,
    ta: TaOptions,
    state: &SolverState,
    outer: usize,
    trace: &mut Trace,
) -> Result<(SolverState, LoopStatus)> {
    let opts = problem.options;
    let mut current = state.clone();
    current.reset_auxiliaries(problem);
    let mut periods = vec![current.period()];
    let mut status = LoopStatus::MaxIter;
    for inner in 1..=opts.max_inner {
        let sur = build(problem, block, &current, ta)?;
        let solver = SolverOptions {
            gap_tol: SURROGATE_GAP * current.period() / MS,
            ..SolverOptions::default()
        };
        let sol = convex::solve_with(&sur.program, Some(&sur.start), &solver)?;
        let report = check_solution(&sur.program, &sol.x);
        let viol = report.max_violation();
        let usable = sol.status != SolveStatus::Infeasible && viol <= 1e-7;
        if !usable {
            if inner == 1 {
                let atom = sol
                    .infeasible_atom
                    .clone()
                    .or_else(|| report.worst().map(|a| a.name.clone()))
                    .unwrap_or_default();
                log::debug!("first {} surrogate failed:\n{}", block.id(), sur.program.dump());
                return Err(Error::Initialization(format!(
                    "first {} surrogate is infeasible at atom `{atom}` (status {:?}, violation {viol:.3e})",
                    block.id(),
                    sol.status
                )));
            }
            status = LoopStatus::Stalled;
            break;
        }
        let next = sur.apply(problem, &current, &sol.x);
        log::trace!(
            "outer {outer} {} inner {inner}: T = {:.6e} s, {} Newton steps, phase I {}, {:?}",
            block.id(),
            next.period(),
            sol.newton_iterations,
            sol.phase1_iterations,
            sol.status
        );
        trace.rows.push(TraceRow {
            outer,
            inner,
            block: block.id().into(),
            period_s: next.period(),
            max_violation: viol,
        });
        let prev = current.period();
        if next.period() > prev {
            status = LoopStatus::Converged;
            break;
        }
        current = next;
        current.inner_iterations += 1;
        current.history.push(current.period());
        periods.push(current.period());
        if prev - current.period() <= opts.inner_tol * current.period() {
            status = LoopStatus::Converged;
            break;
        }
    }
    trace.inner.push(InnerHistory {
        outer,
        block: block.id().into(),
        periods,
        status,
    });
    Ok((current, status))
}

/// Relaxed alternation between the (t, α) and (t, p) blocks until the
/// period stops improving by more than `outer_tol`.
pub fn alternate(
    problem: &Problem,
    state: SolverState,
    ta: TaOptions,
    power_block: bool,
    trace: &mut Trace,
    mut between: impl FnMut(&Problem, SolverState) -> Result<SolverState>,
) -> Result<SolverState> {
    let mut state = state;
    trace.outer.push(state.period());
    for outer in 1..=problem.options.max_outer {
        let before = state.period();
        let (s, _) = sca_loop(problem, Block::Ta, ta, &state, outer, trace)?;
        state = between(problem, s)?;
        if power_block {
            let (s, _) = sca_loop(problem, Block::Pt, ta, &state, outer, trace)?;
            state = between(problem, s)?;
        }
        state.outer_iterations = outer;
        trace.outer.push(state.period());
        if before - state.period() <= problem.options.outer_tol * state.period() {
            break;
        }
    }
    Ok(state)
}

/// Per-column argmax, then moves plants off BSs whose compute load cannot
/// be served even with the compute slot stretched to the longest stable
/// period: smallest compute load first, to the BS with the next-largest α,
/// as long as the worst overload shrinks.
pub fn round_and_repair(problem: &Problem, state: &SolverState) -> AssociationMatrix {
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let net = &problem.scenario.network;
    let mut assign = state.alpha.argmax();
    let mut stretched = state.time.clone();
    let t_max = problem.interval.t_max.min(T_CAP_S);
    stretched.compute += (t_max - stretched.period).max(0.0);
    stretched.period = stretched.period.max(t_max);
    let capacity: Vec<f64> = (0..m_count)
        .map(|m| net.cpu_freq_hz[m] * problem.compute_window(&stretched, m))
        .collect();
    let ratio = |assign: &[usize]| -> Vec<f64> {
        let mut load = vec![0.0; m_count];
        for (k, &m) in assign.iter().enumerate() {
            load[m] += net.compute_cycles(k);
        }
        (0..m_count).map(|m| load[m] / capacity[m].max(1e-300)).collect()
    };
    for _ in 0..k_count * m_count {
        let r = ratio(&assign);
        let worst = max_of(&r);
        if worst <= 1.0 + 1e-9 {
            break;
        }
        let m = (0..m_count).find(|&m| r[m] == worst).unwrap();
        let mut candidates: Vec<usize> = (0..k_count).filter(|&k| assign[k] == m).collect();
        candidates.sort_by(|&a, &b| {
            net.compute_cycles(a)
                .total_cmp(&net.compute_cycles(b))
                .then(state.alpha.get(m, a).total_cmp(&state.alpha.get(m, b)))
        });
        let mut moved = false;
        'search: for k in candidates {
            let mut targets: Vec<usize> = (0..m_count).filter(|&t| t != m).collect();
            targets.sort_by(|&a, &b| state.alpha.get(b, k).total_cmp(&state.alpha.get(a, k)));
            for t in targets {
                let mut trial = assign.clone();
                trial[k] = t;
                if max_of(&ratio(&trial)) < worst {
                    assign = trial;
                    moved = true;
                    break 'search;
                }
            }
        }
        if !moved {
            break;
        }
    }
    AssociationMatrix::from_assignment(m_count, &assign)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Rounded co-design with achieved outages and stability margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoDesignSolution {
    pub protocol: Protocol,
    pub alpha: AssociationMatrix,
    pub power: PowerAllocation,
    pub time: TimeAllocation,
    pub bandwidth_hz: Vec<f64>,
    pub outage_up: Vec<f64>,
    pub outage_down: Vec<f64>,
    pub outage: Vec<f64>,
    pub stability_margin: f64,
    pub status: SolutionStatus,
    /// Binding constraint when infeasible.
    pub binding: Option<String>,
    /// Period of the relaxed solution before rounding.
    pub relaxed_period: Option<f64>,
    pub trace: Trace,
}

impl CoDesignSolution {
    pub fn period(&self) -> f64 {
        self.time.period
    }

    pub fn association_counts(&self) -> Vec<usize> {
        self.alpha.counts()
    }

    /// Worst overall outage across plants.
    pub fn max_outage(&self) -> f64 {
        max_of(&self.outage)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Exact per-plant outages of a rounded design.
pub fn link_outages(
    problem: &Problem,
    alpha: &AssociationMatrix,
    power: &PowerAllocation,
    time: &TimeAllocation,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (gu, gd) = problem.sinrs(alpha, power);
    let bw = problem.bandwidths(alpha);
    let net = &problem.scenario.network;
    let assign = alpha.argmax();
    let mut up = Vec::new();
    let mut down = Vec::new();
    let mut total = Vec::new();
    for (k, &m) in assign.iter().enumerate() {
        let eu = comms::outage(gu[m][k], time.up[m], net.bits_uplink[k], bw[m]);
        let ed = comms::outage(gd[m][k], time.down[m], net.bits_downlink[k], bw[m]);
        up.push(eu);
        down.push(ed);
        total.push(comms::overall_outage(eu, ed));
    }
    (up, down, total)
}

/// Packages a rounded state; the status comes from the exact validator.
pub fn finish(problem: &Problem, state: &SolverState, relaxed_period: Option<f64>, trace: Trace) -> CoDesignSolution {
    let (outage_up, outage_down, outage) = link_outages(problem, &state.alpha, &state.power, &state.time);
    let mut sol = CoDesignSolution {
        protocol: problem.protocol,
        alpha: state.alpha.clone(),
        power: state.power.clone(),
        time: state.time.clone(),
        bandwidth_hz: problem.bandwidths(&state.alpha),
        outage_up,
        outage_down,
        outage,
        stability_margin: problem.stability_margin_at(state.time.period),
        status: SolutionStatus::Optimal,
        binding: None,
        relaxed_period,
        trace,
    };
    let report = validate_solution(problem, &sol);
    if let Some(bad) = report.first_failure() {
        sol.status = SolutionStatus::Infeasible;
        sol.binding = Some(format!("{} ({})", bad.constraint, bad.detail));
    }
    sol
}

/// Infeasible result carrying the binding constraint.
pub fn infeasible(problem: &Problem, state: &SolverState, err: &Error, trace: Trace) -> CoDesignSolution {
    let mut sol = finish(problem, state, None, trace);
    sol.status = SolutionStatus::Infeasible;
    sol.binding = Some(match err {
        Error::Infeasible { constraint, detail } => format!("{constraint} ({detail})"),
        other => other.to_string(),
    });
    sol
}

/// Powers for the rounded association: relaxed values kept on the chosen
/// links (with a floor), downlink rescaled into the budget.
fn rounded_power(problem: &Problem, relaxed: &SolverState, alpha: &AssociationMatrix) -> PowerAllocation {
    let net = &problem.scenario.network;
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let mut p = PowerAllocation {
        up: vec![vec![0.0; k_count]; m_count],
        down: vec![vec![0.0; k_count]; m_count],
    };
    for m in 0..m_count {
        let members: Vec<usize> = (0..k_count).filter(|&k| alpha.get(m, k) > 0.0).collect();
        if members.is_empty() {
            continue;
        }
        let budget = net.downlink_power_budget_w[m];
        for &k in &members {
            let cap = net.uplink_power_cap_w[k];
            p.up[m][k] = relaxed.power.up[m][k].clamp(0.01 * cap, cap);
            p.down[m][k] = relaxed.power.down[m][k].max(0.01 * budget / members.len() as f64);
        }
        let total: f64 = members.iter().map(|&k| p.down[m][k]).sum();
        if total > budget {
            for &k in &members {
                p.down[m][k] *= budget / total;
            }
        }
    }
    p
}

/// Rounds the relaxed point, restores feasibility under each power
/// candidate and refines the best one with α fixed. The repaired rounding
/// and the nearest-BS association are both tried; the shorter refined
/// period wins.
pub fn round_and_refine(
    problem: &Problem,
    relaxed: &SolverState,
    final_block: Block,
    ta: TaOptions,
    power: impl Fn(&AssociationMatrix) -> Option<PowerAllocation>,
    trace: &mut Trace,
) -> Result<SolverState> {
    let mut alphas = vec![round_and_repair(problem, relaxed)];
    let nearest = initial_association(problem, false);
    if nearest != alphas[0] {
        alphas.push(nearest);
    }
    let mut best: Option<(SolverState, Trace)> = None;
    let mut last_err = None;
    for alpha in alphas {
        let mut local = Trace::default();
        match refine_rounded(problem, relaxed, alpha, final_block, ta, &power, &mut local) {
            Ok(s) if best.as_ref().is_none_or(|(b, _)| s.period() < b.period()) => best = Some((s, local)),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((s, local)), _) => {
            trace.rows.extend(local.rows);
            trace.inner.extend(local.inner);
            Ok(s)
        }
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one candidate"),
    }
}

fn refine_rounded(
    problem: &Problem,
    relaxed: &SolverState,
    alpha: AssociationMatrix,
    final_block: Block,
    ta: TaOptions,
    power: &impl Fn(&AssociationMatrix) -> Option<PowerAllocation>,
    trace: &mut Trace,
) -> Result<SolverState> {
    let candidates = match power(&alpha) {
        Some(p) => vec![p],
        None => {
            let kept = rounded_power(problem, relaxed, &alpha);
            let equal = equal_power(problem, &alpha, DownlinkSplit::RowSum);
            let balanced = balanced_uplink(problem, &alpha, &equal);
            let mut out = Vec::new();
            for up in [&kept.up, &balanced.up, &equal.up] {
                for down in [&kept.down, &equal.down] {
                    out.push(PowerAllocation {
                        up: up.clone(),
                        down: down.clone(),
                    });
                }
            }
            out
        }
    };
    let mut best: Option<SolverState> = None;
    let mut last_err = None;
    for p in candidates {
        let mut s = relaxed.clone();
        s.alpha = alpha.clone();
        s.power = p;
        match restore_feasibility(problem, &s, 1.0 + 1e-6) {
            Ok(r) if best.as_ref().is_none_or(|b| r.period() < b.period()) => best = Some(r),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let restored = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one candidate"),
    };
    let outer = relaxed.outer_iterations + 1;
    let (refined, _) = sca_loop(problem, final_block, TaOptions { alpha_variable: false, ..ta }, &restored, outer, trace)?;
    Ok(refined)
}

/// Refines a fixed association from equal powers: restore, then a (t, p)
/// loop.
pub fn refine_association(problem: &Problem, alpha: AssociationMatrix, trace: &mut Trace) -> Result<SolverState> {
    let power = equal_power(problem, &alpha, DownlinkSplit::RowSum);
    let state = initialize_adaptive(problem, alpha, power)?;
    let ta = TaOptions {
        alpha_variable: false,
        downlink_budget: true,
    };
    let (s, _) = sca_loop(problem, Block::Pt, ta, &state, state.outer_iterations + 1, trace)?;
    Ok(s)
}

/// Single-plant moves between BSs, each refined in (t, p), accepted while
/// the period drops by more than `outer_tol`.
pub fn improve_association(problem: &Problem, state: SolverState, trace: &mut Trace) -> SolverState {
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let mut best = state;
    let mut best_trace: Option<Trace> = None;
    for _ in 0..problem.options.max_outer {
        let mut improved = false;
        let assign = best.alpha.argmax();
        for k in 0..k_count {
            for m in (0..m_count).filter(|&m| m != assign[k]) {
                let mut next = assign.clone();
                next[k] = m;
                let alpha = AssociationMatrix::from_assignment(m_count, &next);
                let mut local = Trace::default();
                let Ok(s) = refine_association(problem, alpha, &mut local) else {
                    continue;
                };
                if s.period() < best.period() * (1.0 - problem.options.outer_tol) {
                    let outer = best.outer_iterations;
                    best = s;
                    best.outer_iterations = outer;
                    best_trace = Some(local);
                    improved = true;
                    break;
                }
            }
            if improved {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    if let Some(local) = best_trace {
        trace.rows.extend(local.rows);
        trace.inner.extend(local.inner);
    }
    best
}

/// The proposed design: relaxed alternation, rounding with repair, then a
/// final (t, p) refinement.
pub fn alternating_optimize(problem: &Problem) -> Result<CoDesignSolution> {
    let alpha = initial_association(problem, true);
    let power = equal_power(problem, &alpha, DownlinkSplit::PerPlant);
    let state = initialize_adaptive(problem, alpha, power)?;
    let mut trace = Trace::default();
    let ta = TaOptions {
        alpha_variable: true,
        downlink_budget: true,
    };
    let fdma = problem.protocol == Protocol::Fdma;
    let relaxed = alternate(problem, state, ta, true, &mut trace, |p, s| {
        if fdma {
            restore_feasibility(p, &s, 1.0 + 1e-6)
        } else {
            Ok(s)
        }
    })?;
    let relaxed_period = relaxed.period();
    match round_and_refine(problem, &relaxed, Block::Pt, ta, |_| None, &mut trace) {
        Ok(s) => {
            let s = improve_association(problem, s, &mut trace);
            Ok(finish(problem, &s, Some(relaxed_period), trace))
        }
        Err(e @ Error::Infeasible { .. }) => Ok(infeasible(problem, &relaxed, &e, trace)),
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// Exact validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: String,
    /// Worst normalized violation; positive means violated.
    pub violation: f64,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn first_failure(&self) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| !c.ok)
    }
}

/// Checks the original constraints with exact formulas at
/// [`VALIDATION_TOL`]: outages, stability, compute, time budget,
/// binary association and power limits.
pub fn validate_solution(problem: &Problem, sol: &CoDesignSolution) -> ValidationReport {
    let net = &problem.scenario.network;
    let (m_count, k_count) = (problem.num_bs(), problem.num_plants());
    let eps = net.outage_threshold;
    let mut checks = Vec::new();
    let mut push = |constraint: &str, violation: f64, detail: String| {
        checks.push(ConstraintCheck {
            constraint: constraint.into(),
            violation,
            ok: violation <= VALIDATION_TOL,
            detail,
        });
    };

    let binary = sol.alpha.is_rounded() && sol.alpha.num_bs() == m_count && sol.alpha.num_plants() == k_count;
    push("association binary", if binary { 0.0 } else { 1.0 }, String::new());
    let col = (0..k_count).map(|k| (sol.alpha.column_sum(k) - 1.0).abs()).fold(0.0, f64::max);
    push("association sum", col, String::new());

    let (up, down, _) = link_outages(problem, &sol.alpha, &sol.power, &sol.time);
    let worst = |v: &[f64]| (0..v.len()).fold((0, f64::NEG_INFINITY), |a, k| if v[k] > a.1 { (k, v[k]) } else { a });
    let (ku, eu) = worst(&up);
    push("uplink outage", eu - eps, format!("plant {ku}: {eu:.4e}"));
    let (kd, ed) = worst(&down);
    push("downlink outage", ed - eps, format!("plant {kd}: {ed:.4e}"));

    let margin = problem.stability_margin_at(sol.time.period);
    push("stability", -margin, format!("min eigenvalue {margin:.4e}"));

    let mut compute = f64::NEG_INFINITY;
    let mut compute_detail = String::new();
    for m in 0..m_count {
        let load = problem.load(&sol.alpha, m);
        let cap = net.cpu_freq_hz[m] * problem.compute_window(&sol.time, m);
        let v = (load - cap) / load.max(1.0);
        if v > compute {
            compute = v;
            compute_detail = format!("BS {m}: load {load:.4e} cycles, capacity {cap:.4e}");
        }
    }
    push("compute", compute, compute_detail);

    let rule = problem.period_of(&sol.time.up, sol.time.compute, &sol.time.down);
    let slots_ok = sol.time.up.iter().chain(&sol.time.down).all(|&t| t > 0.0) && sol.time.compute >= 0.0;
    push(
        "time budget",
        ((rule - sol.time.period).abs() / sol.time.period).max(if slots_ok { 0.0 } else { 1.0 }),
        format!("period {:.6e} s, slots sum to {rule:.6e} s", sol.time.period),
    );

    let mut cap_up = f64::NEG_INFINITY;
    for m in 0..m_count {
        for k in 0..k_count {
            let cap = net.uplink_power_cap_w[k];
            cap_up = cap_up.max((sol.alpha.get(m, k) * sol.power.up[m][k] - cap) / cap);
        }
    }
    push("uplink power", cap_up, String::new());
    let mut budget = f64::NEG_INFINITY;
    for m in 0..m_count {
        let p = net.downlink_power_budget_w[m];
        let used: f64 = (0..k_count).map(|k| sol.alpha.get(m, k) * sol.power.down[m][k]).sum();
        budget = budget.max((used - p) / p);
    }
    push("downlink power", budget, String::new());

    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoupling_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-50.0..50.0);
            let y: f64 = rng.random_range(-50.0..50.0);
            let four = (x + y).powi(2) - (x - y).powi(2);
            assert!((four / 4.0 - x * y).abs() <= 1e-12 * (1.0 + (x * y).abs()));
        }
    }

    #[test]
    fn product_surrogate_is_tight_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (x0, y0) = (rng.random_range(0.0..1.0), rng.random_range(-30.0..60.0));
            let rho = balance(x0, y0);
            assert!((product_lower_bound(x0, y0, rho, x0, y0) - x0 * y0).abs() < 1e-9);
            let (x, y) = (rng.random_range(0.0..1.0), rng.random_range(-30.0..60.0));
            assert!(product_lower_bound(x0, y0, rho, x, y) <= x * y + 1e-9);
            assert!(product_lower_bound(x0, y0, 1.0, x, y) <= x * y + 1e-9);
        }
    }

    #[test]
    fn margin_atom_matches_formula() {
        let atom = MarginAtom {
            vars: [0, 1],
            rate: 3.0,
            bits: 500.0,
            scale: 1e4,
        };
        let t_ms = 0.05;
        let v = atom.value(&[2.0, t_ms]).unwrap();
        let exact = rate_margin(7.0, t_ms * MS, 500.0, 1e7);
        assert!((v - (2.0 - exact)).abs() < 1e-9);
        // Second derivative by finite differences.
        let (_, _, h) = atom.derivatives(&[2.0, t_ms]).unwrap();
        let e = 1e-5;
        let f = |t: f64| atom.value(&[2.0, t]).unwrap();
        let fd = (f(t_ms + e) - 2.0 * f(t_ms) + f(t_ms - e)) / (e * e);
        assert!((h[(1, 1)] - fd).abs() < 1e-3 * fd.abs());
        assert!(h[(1, 1)] > 0.0);
    }

    #[test]
    fn log_rate_atom_without_interference() {
        let atom = LogRateAtom {
            vars: vec![0, 1],
            weight: vec![40.0],
            lin: vec![0.0],
            constant: 0.0,
        };
        let p = 0.3;
        let d = (1.0f64 + p * 40.0).log2();
        assert!(atom.value(&[d, p]).unwrap().abs() < 1e-12);
    }
}
