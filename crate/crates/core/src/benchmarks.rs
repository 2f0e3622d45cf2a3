//! Comparison schemes built from the same blocks as the proposed design.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::model::{AssociationMatrix, GainTensors};
use crate::sca::{
    alternate, alternating_optimize, equal_power, finish, infeasible, initial_association, initialize,
    initialize_adaptive, restore_feasibility, round_and_refine, sca_loop, Block, CoDesignSolution, DownlinkSplit,
    Problem, Protocol, ScaOptions, TaOptions, Trace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    AssociationOnly,
    ResourceOnly,
    Fdma,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::AssociationOnly, Scheme::ResourceOnly, Scheme::Fdma];

    pub fn id(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::AssociationOnly => "association_only",
            Scheme::ResourceOnly => "resource_only",
            Scheme::Fdma => "fdma",
        }
    }

    pub fn protocol(self) -> Protocol {
        match self {
            Scheme::Fdma => Protocol::Fdma,
            _ => Protocol::Tdma,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.id() == s)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub solution: CoDesignSolution,
    pub association_counts: Vec<usize>,
    pub period: f64,
}

impl SchemeResult {
    fn new(scheme: Scheme, solution: CoDesignSolution) -> Self {
        SchemeResult {
            scheme,
            association_counts: solution.association_counts(),
            period: solution.period(),
            solution,
        }
    }
}

/// Runs one scheme on a scenario with the given channel gains.
pub fn run_scheme(scheme: Scheme, scenario: &Scenario, gains: &GainTensors, options: ScaOptions) -> Result<SchemeResult> {
    let problem = Problem::new(scenario.clone(), gains.clone(), scheme.protocol(), options)?;
    let solution = match scheme {
        Scheme::Proposed | Scheme::Fdma => alternating_optimize(&problem)?,
        Scheme::AssociationOnly => association_only_solution(&problem)?,
        Scheme::ResourceOnly => resource_only_solution(&problem)?,
    };
    Ok(SchemeResult::new(scheme, solution))
}

/// Equal powers (`P̄_k` uplink, `P_m/Σ_k α` downlink) with the association
/// and slots optimized.
pub fn association_only(scenario: &Scenario, gains: &GainTensors) -> Result<SchemeResult> {
    run_scheme(Scheme::AssociationOnly, scenario, gains, ScaOptions::default())
}

/// Nearest-BS association with powers and slots optimized.
pub fn resource_only(scenario: &Scenario, gains: &GainTensors) -> Result<SchemeResult> {
    run_scheme(Scheme::ResourceOnly, scenario, gains, ScaOptions::default())
}

/// The proposed pipeline on the three-slot FDMA frame.
pub fn fdma_design(scenario: &Scenario, gains: &GainTensors) -> Result<SchemeResult> {
    run_scheme(Scheme::Fdma, scenario, gains, ScaOptions::default())
}

fn equalized(problem: &Problem, alpha: &AssociationMatrix) -> crate::model::PowerAllocation {
    equal_power(problem, alpha, DownlinkSplit::RowSum)
}

fn association_only_solution(problem: &Problem) -> Result<CoDesignSolution> {
    let alpha = initial_association(problem, true);
    let power = equalized(problem, &alpha);
    let state = initialize(problem, alpha, power)?;
    let mut trace = Trace::default();
    let ta = TaOptions {
        alpha_variable: true,
        downlink_budget: false,
    };
    let relaxed = alternate(problem, state, ta, false, &mut trace, |p, mut s| {
        s.power = equalized(p, &s.alpha);
        restore_feasibility(p, &s, 1.0 + 1e-6)
    })?;
    let relaxed_period = relaxed.period();
    let fixed = |a: &AssociationMatrix| Some(equalized(problem, a));
    match round_and_refine(problem, &relaxed, Block::Ta, ta, fixed, &mut trace) {
        Ok(s) => Ok(finish(problem, &s, Some(relaxed_period), trace)),
        Err(e @ Error::Infeasible { .. }) => Ok(infeasible(problem, &relaxed, &e, trace)),
        Err(e) => Err(e),
    }
}

fn resource_only_solution(problem: &Problem) -> Result<CoDesignSolution> {
    let alpha = initial_association(problem, false);
    let power = equal_power(problem, &alpha, DownlinkSplit::RowSum);
    let state = initialize_adaptive(problem, alpha, power)?;
    let mut trace = Trace::default();
    trace.outer.push(state.period());
    let ta = TaOptions {
        alpha_variable: false,
        downlink_budget: true,
    };
    let (s, _) = sca_loop(problem, Block::Pt, ta, &state, 1, &mut trace)?;
    trace.outer.push(s.period());
    Ok(finish(problem, &s, None, trace))
}
