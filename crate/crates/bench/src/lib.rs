//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use nalgebra::DMatrix;
use wncs_core::config::{load_scenario, Scenario};
use wncs_core::convex::ConvexProgram;
use wncs_core::model::{effective_gains, generate_channels, GainTensors};

pub fn default_scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_default.toml")
}

/// The shipped scenario at `seed` with its channel gains.
pub fn instance(seed: u64) -> (Scenario, GainTensors) {
    let s = load_scenario(&default_scenario_path()).expect("shipped scenario parses").with_seed(seed);
    let g = effective_gains(&generate_channels(&s.topology, &s.network)).expect("nonzero channels");
    (s, g)
}

/// `min x + y` over a disc intersected with a 2x2 LMI.
pub fn small_program() -> ConvexProgram {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", -10.0, 10.0);
    let y = p.add_var("y", -10.0, 10.0);
    p.set_objective(x, 1.0);
    p.set_objective(y, 1.0);
    p.add_quadratic("disc", vec![x, y], DMatrix::identity(2, 2) * 2.0, vec![0.0, 0.0], -4.0)
        .expect("valid quadratic");
    p.add_lmi(
        "lmi",
        vec![x, y],
        DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]),
        vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
    )
    .expect("valid LMI");
    p
}
