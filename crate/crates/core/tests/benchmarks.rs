mod common;

use wncs_core::benchmarks::{association_only, fdma_design, resource_only, run_scheme, Scheme};
use wncs_core::config::Scenario;
use wncs_core::model::{effective_gains, generate_channels, GainTensors};
use wncs_core::sca::{validate_solution, Problem, ScaOptions, SolutionStatus};

fn instance(scenario: &Scenario, seed: u64) -> (Scenario, GainTensors) {
    let s = scenario.with_seed(seed);
    let g = effective_gains(&generate_channels(&s.topology, &s.network)).unwrap();
    (s, g)
}

fn single_bs(num_plants: usize) -> Scenario {
    let mut s = common::paper_scenario();
    let plants = s.topology.plant_positions[..num_plants].to_vec();
    s.topology = wncs_core::model::Topology::new(s.topology.num_antennas, vec![[50.0, 50.0]], plants).unwrap();
    s.network.downlink_power_budget_w.truncate(1);
    s.network.cpu_freq_hz.truncate(1);
    for v in [
        &mut s.network.uplink_power_cap_w,
        &mut s.network.bits_uplink,
        &mut s.network.bits_compute,
        &mut s.network.bits_downlink,
        &mut s.network.cycles_per_bit,
    ] {
        v.truncate(num_plants);
    }
    s
}

#[test]
fn single_plant_association_only_uses_full_budget() {
    let (s, g) = instance(&single_bs(1), 5);
    let r = association_only(&s, &g).unwrap();
    assert_eq!(r.solution.power.down[0][0], s.network.downlink_power_budget_w[0]);
    assert_eq!(r.solution.power.up[0][0], s.network.uplink_power_cap_w[0]);
}

#[test]
fn association_only_keeps_equal_powers() {
    let (s, g) = instance(&common::paper_scenario(), 1);
    let r = association_only(&s, &g).unwrap();
    let sol = &r.solution;
    let assign = sol.alpha.argmax();
    for (k, &m) in assign.iter().enumerate() {
        let share = s.network.downlink_power_budget_w[m] / r.association_counts[m] as f64;
        assert!((sol.power.down[m][k] / share - 1.0).abs() < 1e-12, "plant {k}");
        assert_eq!(sol.power.up[m][k], s.network.uplink_power_cap_w[k]);
    }
}

#[test]
fn resource_only_uses_nearest_association() {
    let (s, g) = instance(&common::paper_scenario(), 2);
    let r = resource_only(&s, &g).unwrap();
    let nearest: Vec<usize> = (0..s.topology.num_plants).map(|k| s.topology.nearest_bs(k)).collect();
    assert_eq!(r.solution.alpha.argmax(), nearest);
    assert!(r.solution.alpha.is_rounded());
}

#[test]
fn nearest_split_is_usually_uneven() {
    let base = common::paper_scenario();
    let splits: Vec<[usize; 2]> = (1..=20)
        .map(|seed| {
            let s = base.with_seed(seed);
            let mut counts = [0usize; 2];
            for k in 0..s.topology.num_plants {
                counts[s.topology.nearest_bs(k)] += 1;
            }
            counts
        })
        .collect();
    let uneven = splits.iter().filter(|c| c[0] != c[1]).count();
    assert!(uneven >= 10, "{splits:?}");
}

#[test]
fn single_bs_compute_slot_covers_sixteen_plants() {
    let (s, g) = instance(&single_bs(16), 1);
    // 16 · 500 bits · 1000 cycles/bit at 1 GHz.
    let need = 16.0 * 500.0 * 1000.0 / 1e9;
    assert!((need - 8e-3_f64).abs() < 1e-15);
    let tdma = resource_only(&s, &g).unwrap();
    let fdma = fdma_design(&s, &g).unwrap();
    assert!(tdma.solution.time.compute >= need * (1.0 - 1e-9));
    assert!(fdma.solution.time.compute >= need * (1.0 - 1e-9));
    // One BS: both protocols compute in the same window.
    assert!((tdma.solution.time.compute / fdma.solution.time.compute - 1.0).abs() < 1e-6);
}

#[test]
fn proposed_is_no_worse_on_common_seeds() {
    let base = common::paper_scenario();
    for seed in 1..=3 {
        let (s, g) = instance(&base, seed);
        let proposed = run_scheme(Scheme::Proposed, &s, &g, ScaOptions::default()).unwrap();
        assert_eq!(proposed.solution.status, SolutionStatus::Optimal);
        for scheme in [Scheme::ResourceOnly, Scheme::Fdma] {
            let other = run_scheme(scheme, &s, &g, ScaOptions::default()).unwrap();
            let problem = Problem::new(s.clone(), g.clone(), scheme.protocol(), ScaOptions::default()).unwrap();
            assert!(validate_solution(&problem, &other.solution).all_ok());
            assert!(proposed.period <= other.period + 1e-6, "seed {seed} {scheme}: {} vs {}", proposed.period, other.period);
        }
    }
}
