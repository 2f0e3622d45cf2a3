//! Runs every scheme on the default scenario for the seeds given on the
//! command line (seed 1 when none) and prints the achieved periods.

use std::path::Path;
use std::time::Instant;

use wncs_core::benchmarks::{run_scheme, Scheme};
use wncs_core::config::load_scenario;
use wncs_core::model::{effective_gains, generate_channels};
use wncs_core::sca::ScaOptions;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_default.toml");
    let base = load_scenario(&path)?;
    let mut seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        seeds.push(1);
    }
    for seed in seeds {
        let scenario = base.with_seed(seed);
        let gains = effective_gains(&generate_channels(&scenario.topology, &scenario.network))?;
        for scheme in Scheme::ALL {
            let start = Instant::now();
            match run_scheme(scheme, &scenario, &gains, ScaOptions::default()) {
                Ok(r) => println!(
                    "seed {seed:>3} {:<17} T = {:.4} ms  counts {:?}  {:?}  ({:.1} s)",
                    scheme.id(),
                    r.period * 1e3,
                    r.association_counts,
                    r.solution.status,
                    start.elapsed().as_secs_f64()
                ),
                Err(e) => println!("seed {seed:>3} {:<17} error: {e}", scheme.id()),
            }
        }
    }
    Ok(())
}
