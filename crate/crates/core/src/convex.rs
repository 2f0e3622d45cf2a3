//! Log-barrier interior-point solver for small smooth convex programs.
//!
//! A program has a linear objective, variable bounds, linear equalities and
//! a list of named inequality atoms: affine, convex quadratic, smooth convex
//! callbacks and affine LMIs. Feasibility is established by a phase-I slack
//! program when the start point is not strictly feasible.

use std::fmt::{self, Debug, Write as _};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetric_eigen};

/// A convex function `g` of a few program variables, used as `g(x) ≤ 0`.
///
/// `x` holds the values of [`SmoothConvex::vars`] in order. Returning `None`
/// signals a point outside the atom's open domain.
pub trait SmoothConvex: Send + Sync + Debug {
    fn vars(&self) -> &[usize];
    fn value(&self, x: &[f64]) -> Option<f64>;
    /// Value, gradient and Hessian over the local variables.
    fn derivatives(&self, x: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)>;
}

type EvalFn = dyn Fn(&[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> + Send + Sync;

/// Closure-backed [`SmoothConvex`] atom.
pub struct ClosureAtom {
    vars: Vec<usize>,
    label: String,
    eval: Box<EvalFn>,
}

impl ClosureAtom {
    pub fn new(
        label: impl Into<String>,
        vars: Vec<usize>,
        eval: impl Fn(&[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> + Send + Sync + 'static,
    ) -> Self {
        ClosureAtom {
            vars,
            label: label.into(),
            eval: Box::new(eval),
        }
    }
}

impl Debug for ClosureAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosureAtom({}, vars={:?})", self.label, self.vars)
    }
}

impl SmoothConvex for ClosureAtom {
    fn vars(&self) -> &[usize] {
        &self.vars
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        (self.eval)(x).map(|(v, _, _)| v)
    }

    fn derivatives(&self, x: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
        (self.eval)(x)
    }
}

#[derive(Debug, Clone)]
pub enum Atom {
    /// `Σ a_i x_i ≤ rhs`.
    Affine { terms: Vec<(usize, f64)>, rhs: f64 },
    /// `zᵀ P z + qᵀ z + r ≤ 0` with `z = x[vars]` and `P ⪰ 0`.
    Quadratic {
        vars: Vec<usize>,
        p: DMatrix<f64>,
        q: Vec<f64>,
        r: f64,
    },
    /// `g(x) ≤ 0` for a smooth convex `g`.
    Smooth(Arc<dyn SmoothConvex>),
    /// `F0 + Σ x[vars[i]] M_i ⪰ 0`.
    Lmi {
        vars: Vec<usize>,
        constant: DMatrix<f64>,
        mats: Vec<DMatrix<f64>>,
    },
}

impl Atom {
    fn vars(&self) -> Vec<usize> {
        match self {
            Atom::Affine { terms, .. } => terms.iter().map(|t| t.0).collect(),
            Atom::Quadratic { vars, .. } | Atom::Lmi { vars, .. } => vars.clone(),
            Atom::Smooth(s) => s.vars().to_vec(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Atom::Affine { .. } => "affine",
            Atom::Quadratic { .. } => "quadratic",
            Atom::Smooth(_) => "smooth",
            Atom::Lmi { .. } => "lmi",
        }
    }

    fn lmi_dim(&self) -> usize {
        match self {
            Atom::Lmi { constant, .. } => constant.nrows(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub atom: Atom,
}

#[derive(Debug, Clone)]
pub struct Equality {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub var_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub equalities: Vec<Equality>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    /// Adds a variable with bounds `lo ≤ x ≤ hi` (either may be infinite).
    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> usize {
        self.var_names.push(name.into());
        self.lower.push(lo);
        self.upper.push(hi);
        self.objective.push(0.0);
        self.var_names.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub fn add_affine(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            atom: Atom::Affine { terms, rhs },
        });
    }

    pub fn add_quadratic(
        &mut self,
        name: impl Into<String>,
        vars: Vec<usize>,
        p: DMatrix<f64>,
        q: Vec<f64>,
        r: f64,
    ) -> Result<()> {
        let name = name.into();
        if p.shape() != (vars.len(), vars.len()) || q.len() != vars.len() {
            return Err(Error::Program(format!("quadratic atom `{name}` has mismatched dimensions")));
        }
        if crate::linalg::max_abs(&(&p - p.transpose())) > 1e-12 * (1.0 + crate::linalg::max_abs(&p)) {
            return Err(Error::Program(format!("quadratic atom `{name}` is not symmetric")));
        }
        let scale = crate::linalg::max_abs(&p).max(1e-300);
        if min_eigenvalue(&p) < -1e-12 * scale {
            return Err(Error::Program(format!("quadratic atom `{name}` is not positive semidefinite")));
        }
        self.constraints.push(Constraint {
            name,
            atom: Atom::Quadratic { vars, p, q, r },
        });
        Ok(())
    }

    pub fn add_smooth(&mut self, name: impl Into<String>, atom: Arc<dyn SmoothConvex>) {
        self.constraints.push(Constraint {
            name: name.into(),
            atom: Atom::Smooth(atom),
        });
    }

    pub fn add_lmi(
        &mut self,
        name: impl Into<String>,
        vars: Vec<usize>,
        constant: DMatrix<f64>,
        mats: Vec<DMatrix<f64>>,
    ) -> Result<()> {
        let name = name.into();
        let p = constant.nrows();
        if constant.ncols() != p || mats.len() != vars.len() || mats.iter().any(|m| m.shape() != (p, p)) {
            return Err(Error::Program(format!("LMI atom `{name}` has mismatched dimensions")));
        }
        let asym = |m: &DMatrix<f64>| crate::linalg::max_abs(&(m - m.transpose())) > 1e-12 * (1.0 + crate::linalg::max_abs(m));
        if asym(&constant) || mats.iter().any(asym) {
            return Err(Error::Program(format!("LMI atom `{name}` has a non-symmetric coefficient")));
        }
        self.constraints.push(Constraint {
            name,
            atom: Atom::Lmi { vars, constant, mats },
        });
        Ok(())
    }

    pub fn add_equality(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(Equality {
            name: name.into(),
            terms,
            rhs,
        });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for j in 0..n {
            if !(self.lower[j] < self.upper[j]) || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::Program(format!(
                    "variable `{}` has empty bounds [{}, {}]",
                    self.var_names[j], self.lower[j], self.upper[j]
                )));
            }
        }
        for c in &self.constraints {
            if c.atom.vars().iter().any(|&v| v >= n) {
                return Err(Error::Program(format!("atom `{}` references an unknown variable", c.name)));
            }
        }
        for e in &self.equalities {
            if e.terms.iter().any(|&(v, _)| v >= n) {
                return Err(Error::Program(format!("equality `{}` references an unknown variable", e.name)));
            }
        }
        Ok(())
    }

    /// Structured text listing of variables, atoms and equalities.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "program vars={} atoms={} equalities={}", self.num_vars(), self.constraints.len(), self.equalities.len());
        for j in 0..self.num_vars() {
            let _ = writeln!(
                s,
                "var {j} {} in [{:e}, {:e}] cost {:e}",
                self.var_names[j], self.lower[j], self.upper[j], self.objective[j]
            );
        }
        for c in &self.constraints {
            match &c.atom {
                Atom::Affine { terms, rhs } => {
                    let _ = writeln!(s, "affine {} {:?} <= {:e}", c.name, terms, rhs);
                }
                Atom::Quadratic { vars, p, q, r } => {
                    let _ = writeln!(s, "quadratic {} vars={:?} P={:?} q={:?} r={:e}", c.name, vars, p.as_slice(), q, r);
                }
                Atom::Smooth(a) => {
                    let _ = writeln!(s, "smooth {} {:?}", c.name, a);
                }
                Atom::Lmi { vars, constant, mats } => {
                    let _ = writeln!(
                        s,
                        "lmi {} vars={:?} F0={:?} M={:?}",
                        c.name,
                        vars,
                        constant.as_slice(),
                        mats.iter().map(|m| m.as_slice().to_vec()).collect::<Vec<_>>()
                    );
                }
            }
        }
        for e in &self.equalities {
            let _ = writeln!(s, "equality {} {:?} = {:e}", e.name, e.terms, e.rhs);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub t: f64,
    pub objective: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub newton_iterations: usize,
    pub phase1_iterations: usize,
    pub stages: Vec<StageRecord>,
    /// Worst atom at the phase-I optimum when infeasible.
    pub infeasible_atom: Option<String>,
    pub phase1_slack: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub mu: f64,
    pub gap_tol: f64,
    pub max_newton: usize,
    pub feas_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mu: 10.0,
            gap_tol: 1e-8,
            max_newton: 500,
            feas_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomViolation {
    pub name: String,
    pub kind: String,
    /// Signed: negative inside, zero on the boundary, positive when violated.
    pub violation: f64,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    pub atoms: Vec<AtomViolation>,
    pub bounds: Vec<AtomViolation>,
    pub equalities: Vec<AtomViolation>,
}

impl ViolationReport {
    /// Largest positive violation over everything, or 0.
    pub fn max_violation(&self) -> f64 {
        self.atoms
            .iter()
            .chain(&self.bounds)
            .chain(&self.equalities)
            .map(|a| a.violation)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&AtomViolation> {
        self.atoms
            .iter()
            .chain(&self.bounds)
            .chain(&self.equalities)
            .max_by(|a, b| a.violation.total_cmp(&b.violation))
    }
}

fn gather(x: &[f64], vars: &[usize]) -> Vec<f64> {
    vars.iter().map(|&v| x[v]).collect()
}

fn lmi_matrix(x: &[f64], vars: &[usize], constant: &DMatrix<f64>, mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut f = constant.clone();
    for (m, &v) in mats.iter().zip(vars) {
        f += m * x[v];
    }
    f
}

/// Re-evaluates every atom, bound and equality at `x`.
pub fn check_solution(program: &ConvexProgram, x: &[f64]) -> ViolationReport {
    let atoms = program
        .constraints
        .iter()
        .map(|c| {
            let (violation, min_eig) = match &c.atom {
                Atom::Affine { terms, rhs } => (terms.iter().map(|&(v, a)| a * x[v]).sum::<f64>() - rhs, None),
                Atom::Quadratic { vars, p, q, r } => {
                    let z = DVector::from_vec(gather(x, vars));
                    ((z.transpose() * p * &z)[0] + q.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() + r, None)
                }
                Atom::Smooth(s) => (s.value(&gather(x, s.vars())).unwrap_or(f64::INFINITY), None),
                Atom::Lmi { vars, constant, mats } => {
                    let e = symmetric_eigen(&lmi_matrix(x, vars, constant, mats)).0[0];
                    (-e, Some(e))
                }
            };
            AtomViolation {
                name: c.name.clone(),
                kind: c.atom.kind().into(),
                violation,
                min_eigenvalue: min_eig,
            }
        })
        .collect();
    let bounds = (0..program.num_vars())
        .map(|j| AtomViolation {
            name: program.var_names[j].clone(),
            kind: "bound".into(),
            violation: (program.lower[j] - x[j]).max(x[j] - program.upper[j]),
            min_eigenvalue: None,
        })
        .collect();
    let equalities = program
        .equalities
        .iter()
        .map(|e| AtomViolation {
            name: e.name.clone(),
            kind: "equality".into(),
            violation: (e.terms.iter().map(|&(v, a)| a * x[v]).sum::<f64>() - e.rhs).abs(),
            min_eigenvalue: None,
        })
        .collect();
    ViolationReport { atoms, bounds, equalities }
}

/// Barrier problem over either the program variables (phase II) or the
/// program variables plus one slack appended at the end (phase I).
struct Barrier<'a> {
    prog: &'a ConvexProgram,
    slack: Option<usize>,
    dim: usize,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    eq: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    /// Barrier parameter count: scalar atoms, finite bounds and LMI orders.
    weight: f64,
}

/// Constraint values at a point strictly inside the barrier domain.
struct Values {
    g: Vec<f64>,
    lmi_diag: Vec<Vec<f64>>,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a ConvexProgram, phase_one: bool) -> Self {
        let n = prog.num_vars();
        let dim = if phase_one { n + 1 } else { n };
        let mut cost = if phase_one { vec![0.0; dim] } else { prog.objective.clone() };
        let mut lower = prog.lower.clone();
        let mut upper = prog.upper.clone();
        if phase_one {
            cost[n] = 1.0;
            lower.push(-1.0);
            upper.push(f64::INFINITY);
        }
        let r = prog.equalities.len();
        let mut eq = DMatrix::zeros(r, dim);
        let mut eq_rhs = DVector::zeros(r);
        for (i, e) in prog.equalities.iter().enumerate() {
            for &(v, a) in &e.terms {
                eq[(i, v)] += a;
            }
            eq_rhs[i] = e.rhs;
        }
        let mut weight = 0.0;
        for c in &prog.constraints {
            weight += match &c.atom {
                Atom::Lmi { .. } => c.atom.lmi_dim() as f64,
                _ => 1.0,
            };
        }
        weight += lower.iter().filter(|l| l.is_finite()).count() as f64;
        weight += upper.iter().filter(|u| u.is_finite()).count() as f64;
        Barrier {
            prog,
            slack: phase_one.then_some(n),
            dim,
            cost,
            lower,
            upper,
            eq,
            eq_rhs,
            weight,
        }
    }

    fn slack_value(&self, x: &[f64]) -> f64 {
        self.slack.map_or(0.0, |s| x[s])
    }

    /// Constraint values, or `None` if `x` is not strictly inside.
    fn values(&self, x: &[f64]) -> Option<Values> {
        for j in 0..self.dim {
            if !(x[j] > self.lower[j] && x[j] < self.upper[j]) {
                return None;
            }
        }
        let s = self.slack_value(x);
        let mut g = Vec::with_capacity(self.prog.constraints.len());
        let mut lmi_diag = Vec::new();
        for c in &self.prog.constraints {
            match &c.atom {
                Atom::Affine { terms, rhs } => {
                    g.push(terms.iter().map(|&(v, a)| a * x[v]).sum::<f64>() - rhs - s);
                }
                Atom::Quadratic { vars, p, q, r } => {
                    let z = gather(x, vars);
                    let mut val = *r;
                    for i in 0..z.len() {
                        val += q[i] * z[i];
                        for j in 0..z.len() {
                            val += z[i] * p[(i, j)] * z[j];
                        }
                    }
                    g.push(val - s);
                }
                Atom::Smooth(a) => g.push(a.value(&gather(x, a.vars()))? - s),
                Atom::Lmi { vars, constant, mats } => {
                    let mut f = lmi_matrix(x, vars, constant, mats);
                    if self.slack.is_some() {
                        for i in 0..f.nrows() {
                            f[(i, i)] += s;
                        }
                    }
                    let ch = Cholesky::new(f)?;
                    let diag: Vec<f64> = (0..ch.l_dirty().nrows()).map(|i| ch.l_dirty()[(i, i)]).collect();
                    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
                        return None;
                    }
                    lmi_diag.push(diag);
                    g.push(f64::NAN);
                }
            }
        }
        for (c, v) in self.prog.constraints.iter().zip(&g) {
            if !matches!(c.atom, Atom::Lmi { .. }) && !(*v < 0.0) {
                return None;
            }
        }
        Some(Values { g, lmi_diag })
    }

    /// `ψ(x_new) − ψ(x_old)` for `ψ = t·cᵀx + φ`, summed as per-term log ratios.
    fn delta(&self, t: f64, x_old: &[f64], v_old: &Values, x_new: &[f64], v_new: &Values) -> f64 {
        let mut d = 0.0;
        for j in 0..self.dim {
            d += t * self.cost[j] * (x_new[j] - x_old[j]);
            if self.lower[j].is_finite() {
                d -= ((x_new[j] - self.lower[j]) / (x_old[j] - self.lower[j])).ln();
            }
            if self.upper[j].is_finite() {
                d -= ((self.upper[j] - x_new[j]) / (self.upper[j] - x_old[j])).ln();
            }
        }
        for (c, (go, gn)) in self.prog.constraints.iter().zip(v_old.g.iter().zip(&v_new.g)) {
            if !matches!(c.atom, Atom::Lmi { .. }) {
                d -= (gn / go).ln();
            }
        }
        for (lo, ln) in v_old.lmi_diag.iter().zip(&v_new.lmi_diag) {
            for (a, b) in lo.iter().zip(ln) {
                d -= 2.0 * (b / a).ln();
            }
        }
        d
    }

    /// Gradient and Hessian of the barrier `φ` at an interior point.
    fn derivatives(&self, x: &[f64], vals: &Values) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dim;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            if self.lower[j].is_finite() {
                let d = x[j] - self.lower[j];
                grad[j] -= 1.0 / d;
                hess[(j, j)] += 1.0 / (d * d);
            }
            if self.upper[j].is_finite() {
                let d = self.upper[j] - x[j];
                grad[j] += 1.0 / d;
                hess[(j, j)] += 1.0 / (d * d);
            }
        }
        let slack = self.slack;
        let mut idx: Vec<usize> = Vec::new();
        let mut a: Vec<f64> = Vec::new();
        for (ci, c) in self.prog.constraints.iter().enumerate() {
            idx.clear();
            a.clear();
            let mut local_hess: Option<DMatrix<f64>> = None;
            match &c.atom {
                Atom::Affine { terms, .. } => {
                    for &(v, coef) in terms {
                        idx.push(v);
                        a.push(coef);
                    }
                }
                Atom::Quadratic { vars, p, q, .. } => {
                    let z = DVector::from_vec(gather(x, vars));
                    let gq = p * &z * 2.0;
                    idx.extend_from_slice(vars);
                    a.extend((0..vars.len()).map(|i| gq[i] + q[i]));
                    local_hess = Some(p * 2.0);
                }
                Atom::Smooth(s) => {
                    let (_, gl, hl) = s.derivatives(&gather(x, s.vars()))?;
                    idx.extend_from_slice(s.vars());
                    a.extend_from_slice(&gl);
                    local_hess = Some(hl);
                }
                Atom::Lmi { vars, constant, mats } => {
                    let mut f = lmi_matrix(x, vars, constant, mats);
                    let mut all_vars = vars.clone();
                    let mut all_mats: Vec<DMatrix<f64>> = mats.clone();
                    if let Some(s) = slack {
                        let p = f.nrows();
                        for i in 0..p {
                            f[(i, i)] += x[s];
                        }
                        all_vars.push(s);
                        all_mats.push(DMatrix::identity(p, p));
                    }
                    let finv = Cholesky::new(f)?.inverse();
                    let g: Vec<DMatrix<f64>> = all_mats.iter().map(|m| &finv * m).collect();
                    for (i, &vi) in all_vars.iter().enumerate() {
                        grad[vi] -= g[i].trace();
                        for (j, &vj) in all_vars.iter().enumerate() {
                            hess[(vi, vj)] += (&g[i] * &g[j]).trace();
                        }
                    }
                    continue;
                }
            }
            if let Some(s) = slack {
                idx.push(s);
                a.push(-1.0);
            }
            let w = 1.0 / (-vals.g[ci]);
            for (i, &vi) in idx.iter().enumerate() {
                grad[vi] += w * a[i];
                for (j, &vj) in idx.iter().enumerate() {
                    hess[(vi, vj)] += w * w * a[i] * a[j];
                }
            }
            if let Some(hl) = local_hess {
                let local = hl.nrows();
                for i in 0..local {
                    for j in 0..local {
                        hess[(idx[i], idx[j])] += w * hl[(i, j)];
                    }
                }
            }
        }
        Some((grad, hess))
    }

    /// Solves `[H Aᵀ; A 0][d; w] = [−g; −r]` with `r = Ax − b` (zero when
    /// `x` is not given), so that equality drift is corrected.
    fn newton_system(
        &self,
        hess: &DMatrix<f64>,
        grad: &DVector<f64>,
        x: Option<&[f64]>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let chol = factor(hess)?;
        let hg = chol.solve(grad);
        if self.eq.nrows() == 0 {
            return Some((-hg, DVector::zeros(0)));
        }
        let hat = chol.solve(&self.eq.transpose());
        let schur = &self.eq * &hat;
        let mut rhs = -(&self.eq * &hg);
        if let Some(x) = x {
            rhs += &self.eq * DVector::from_column_slice(x) - &self.eq_rhs;
        }
        let w = factor(&schur)?.solve(&rhs);
        let d = -(hg + hat * &w);
        Some((d, w))
    }

    /// Moves `x` onto the equality set and strictly inside the bounds.
    fn project_start(&self, x: &mut [f64]) {
        let clip = |x: &mut [f64]| {
            for j in 0..self.dim {
                let (l, u) = (self.lower[j], self.upper[j]);
                let width = u - l;
                let margin_l = (1e-8 * l.abs().max(1.0)).min(0.25 * width);
                let margin_u = (1e-8 * u.abs().max(1.0)).min(0.25 * width);
                if l.is_finite() && x[j] < l + margin_l {
                    x[j] = l + margin_l;
                }
                if u.is_finite() && x[j] > u - margin_u {
                    x[j] = u - margin_u;
                }
            }
        };
        clip(x);
        if self.eq.nrows() == 0 {
            return;
        }
        let aat = &self.eq * self.eq.transpose();
        let Some(f) = factor(&aat) else { return };
        for _ in 0..50 {
            let xv = DVector::from_column_slice(x);
            let r = &self.eq * &xv - &self.eq_rhs;
            if r.amax() <= 1e-13 * (1.0 + self.eq_rhs.amax()) {
                let inside = (0..self.dim).all(|j| x[j] > self.lower[j] && x[j] < self.upper[j]);
                if inside {
                    return;
                }
            }
            let corr = self.eq.transpose() * f.solve(&r);
            for j in 0..self.dim {
                x[j] -= corr[j];
            }
            let before: Vec<f64> = x.to_vec();
            clip(x);
            if before == x {
                return;
            }
        }
    }
}

/// Cholesky with Levenberg damping on failure.
fn factor(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut delta = 1e-14 * scale;
    for _ in 0..30 {
        let mut damped = m.clone();
        for i in 0..m.nrows() {
            damped[(i, i)] += delta;
        }
        if let Some(c) = Cholesky::new(damped) {
            return Some(c);
        }
        delta *= 10.0;
    }
    None
}

enum Centering {
    Converged,
    Budget,
    /// Phase I found a strictly feasible point.
    Feasible,
    Failed,
}

struct Run {
    x: Vec<f64>,
    newton: usize,
    stages: Vec<StageRecord>,
    kkt: f64,
    t: f64,
}

fn center(
    b: &Barrier<'_>,
    run: &mut Run,
    t: f64,
    opts: &SolverOptions,
    stop_when_negative_slack: bool,
) -> Centering {
    let Some(mut vals) = b.values(&run.x) else {
        return Centering::Failed;
    };
    loop {
        if stop_when_negative_slack {
            if let Some(s) = b.slack {
                if run.x[s] < 0.0 {
                    return Centering::Feasible;
                }
            }
        }
        let Some((gphi, hess)) = b.derivatives(&run.x, &vals) else {
            return Centering::Failed;
        };
        let grad = DVector::from_column_slice(&b.cost) * t + &gphi;
        let Some((d, w)) = b.newton_system(&hess, &grad, Some(&run.x)) else {
            return Centering::Failed;
        };
        let resid = &grad + b.eq.transpose() * &w;
        run.kkt = resid.amax() / t;
        let lambda2 = -grad.dot(&d);
        if lambda2 <= 2e-10 || !lambda2.is_finite() {
            return Centering::Converged;
        }
        if run.newton >= opts.max_newton {
            return Centering::Budget;
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let cand: Vec<f64> = run.x.iter().zip(d.iter()).map(|(x, d)| x + step * d).collect();
            if let Some(v) = b.values(&cand) {
                let change = b.delta(t, &run.x, &vals, &cand, &v);
                if change <= -0.01 * step * lambda2 {
                    accepted = Some((cand, v));
                    break;
                }
            }
            step *= 0.5;
        }
        run.newton += 1;
        match accepted {
            Some((cand, v)) => {
                run.x = cand;
                vals = v;
                // A collapsed line search at a small decrement means ψ is
                // resolved to rounding precision.
                if step < 1e-3 && lambda2 < 1e-3 {
                    return Centering::Converged;
                }
            }
            // No decrease representable at this precision: the point is centered.
            None => return Centering::Converged,
        }
    }
}

fn initial_t(b: &Barrier<'_>, x: &[f64], opts: &SolverOptions) -> f64 {
    let fallback = 1.0;
    let Some(vals) = b.values(x) else { return fallback };
    let Some((gphi, hess)) = b.derivatives(x, &vals) else { return fallback };
    let c = DVector::from_column_slice(&b.cost);
    let (Some((dc, _)), Some((dphi, _))) = (b.newton_system(&hess, &c, None), b.newton_system(&hess, &gphi, None)) else {
        return fallback;
    };
    let cpc = -c.dot(&dc);
    let cpphi = -c.dot(&dphi);
    let mut t = if cpc > 0.0 && -cpphi / cpc > 0.0 { -cpphi / cpc } else { fallback };
    // Start no closer than a 10% relative gap.
    let obj = c.dot(&DVector::from_column_slice(x)).abs().max(1.0);
    t = t.min(b.weight / (1e-1 * obj)).max(b.weight / (1e6 * obj));
    let _ = opts;
    t
}

fn path_follow(b: &Barrier<'_>, run: &mut Run, opts: &SolverOptions, phase_one: bool) -> Centering {
    let mut t = initial_t(b, &run.x, opts);
    loop {
        let before = run.newton;
        let outcome = center(b, run, t, opts, phase_one);
        run.t = t;
        let objective = b.cost.iter().zip(&run.x).map(|(c, x)| c * x).sum();
        run.stages.push(StageRecord {
            t,
            objective,
            newton_steps: run.newton - before,
        });
        match outcome {
            Centering::Converged => {}
            other => return other,
        }
        if b.weight / t <= opts.gap_tol {
            return Centering::Converged;
        }
        t *= opts.mu;
    }
}

fn default_start(program: &ConvexProgram) -> Vec<f64> {
    (0..program.num_vars())
        .map(|j| {
            let (l, u) = (program.lower[j], program.upper[j]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l + 1.0,
                (false, true) => u - 1.0,
                (false, false) => 0.0,
            }
        })
        .collect()
}

pub fn solve(program: &ConvexProgram, warm_start: Option<&[f64]>) -> Result<Solution> {
    solve_with(program, warm_start, &SolverOptions::default())
}

pub fn solve_with(program: &ConvexProgram, warm_start: Option<&[f64]>, opts: &SolverOptions) -> Result<Solution> {
    program.validate()?;
    let n = program.num_vars();
    let mut x = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => {
            return Err(Error::Program(format!("warm start has length {}, program has {n} variables", w.len())));
        }
        None => default_start(program),
    };
    let phase2 = Barrier::new(program, false);
    phase2.project_start(&mut x);

    let mut phase1_iterations = 0;
    let mut phase1_slack = None;
    if phase2.values(&x).is_none() {
        let p1 = Barrier::new(program, true);
        let mut x1 = x.clone();
        // Slack large enough for every atom to be strictly satisfied.
        let mut worst: f64 = 0.0;
        for c in &program.constraints {
            let v = match &c.atom {
                Atom::Lmi { vars, constant, mats } => -min_eigenvalue(&lmi_matrix(&x, vars, constant, mats)),
                Atom::Smooth(a) => match a.value(&gather(&x, a.vars())) {
                    Some(v) => v,
                    None => {
                        return Err(Error::Program(format!(
                            "start point lies outside the domain of atom `{}`",
                            c.name
                        )))
                    }
                },
                _ => check_solution(
                    &ConvexProgram {
                        var_names: program.var_names.clone(),
                        lower: program.lower.clone(),
                        upper: program.upper.clone(),
                        objective: program.objective.clone(),
                        constraints: vec![c.clone()],
                        equalities: vec![],
                    },
                    &x,
                )
                .atoms[0]
                    .violation,
            };
            worst = worst.max(v);
        }
        x1.push(worst + 1e-3 * (1.0 + worst.abs()));
        p1.project_start(&mut x1);
        let mut run = Run {
            x: x1,
            newton: 0,
            stages: Vec::new(),
            kkt: f64::INFINITY,
            t: 1.0,
        };
        let outcome = path_follow(&p1, &mut run, opts, true);
        phase1_iterations = run.newton;
        let s = run.x[n];
        phase1_slack = Some(s);
        let feasible = matches!(outcome, Centering::Feasible) || s < 0.0;
        if !feasible {
            let xs = &run.x[..n];
            let report = check_solution(program, xs);
            let worst = report.worst().map(|a| a.name.clone());
            let status = if s > opts.feas_tol || matches!(outcome, Centering::Converged) {
                SolveStatus::Infeasible
            } else {
                SolveStatus::MaxIter
            };
            log::debug!("phase I ended with slack {s:e}, worst atom {worst:?}");
            return Ok(Solution {
                objective: program.objective.iter().zip(xs).map(|(c, x)| c * x).sum(),
                x: xs.to_vec(),
                status,
                kkt_residual: f64::INFINITY,
                newton_iterations: 0,
                phase1_iterations,
                stages: Vec::new(),
                infeasible_atom: worst,
                phase1_slack,
            });
        }
        x = run.x[..n].to_vec();
    }

    let mut run = Run {
        x,
        newton: 0,
        stages: Vec::new(),
        kkt: f64::INFINITY,
        t: 1.0,
    };
    let outcome = path_follow(&phase2, &mut run, opts, false);
    let status = match outcome {
        Centering::Converged if phase2.weight / run.t <= opts.gap_tol => SolveStatus::Optimal,
        Centering::Failed => {
            return Err(Error::Program("Newton system could not be factored".into()));
        }
        _ => SolveStatus::MaxIter,
    };
    let objective = program.objective.iter().zip(&run.x).map(|(c, x)| c * x).sum();
    Ok(Solution {
        x: run.x,
        objective,
        status,
        kkt_residual: run.kkt.max(phase2.weight / run.t),
        newton_iterations: run.newton,
        phase1_iterations,
        stages: run.stages,
        infeasible_atom: None,
        phase1_slack,
    })
}
