mod common;

use std::fs;

use wncs_core::benchmarks::Scheme;
use wncs_core::harness::{
    run, run_to_dir, summarize, ExperimentSpec, ResultTable, SolutionRecord, SweepAxis, COST_COLUMNS, COST_FILE,
    LATENCY_COLUMNS, LATENCY_FILE, RESULTS_FILE, RESULT_COLUMNS, SOLUTIONS_DIR, SUMMARY_FILE,
};

fn spec(body: &str) -> ExperimentSpec {
    let mut s = ExperimentSpec::parse(&format!("scenario = \"unused\"\n{body}")).unwrap();
    s.scenario = common::paper_path();
    s
}

/// Header line, then the CSV body.
fn split_header(text: &str) -> (&str, csv::Reader<&[u8]>) {
    let (head, body) = text.split_once('\n').unwrap();
    (head, csv::Reader::from_reader(body.as_bytes()))
}

#[test]
fn one_scheme_one_seed_gives_one_row() {
    let s = spec("schemes = [\"resource_only\"]\nseeds = [4]\n[control]\nhorizon = 20\ntrials = 2\n");
    let t = run(&s).unwrap();
    assert_eq!(t.rows.len(), 1);
    let r = &t.rows[0];
    assert_eq!((r.scheme, r.seed, r.sweep_value), (Scheme::ResourceOnly, 4, None));
    assert!(r.is_optimal());
    assert!(r.period.unwrap() > 0.0);
    assert_eq!(r.association_counts.iter().sum::<usize>(), 16);
    assert_eq!(t.series[0].j_ave.len(), 20);
    // Single-row table: the aggregate is the row.
    let sum = summarize(&t);
    assert_eq!(sum.latency[0].mean_period, r.period);
    assert_eq!(sum.latency[0].median_period, r.period);
}

#[test]
fn rerun_is_byte_identical() {
    let s = spec("schemes = [\"resource_only\", \"association_only\"]\nseeds = [1, 2]\n[control]\nhorizon = 30\ntrials = 3\n");
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_to_dir(&s, dir_a.path()).unwrap();
    run_to_dir(&s, dir_b.path()).unwrap();
    for f in [RESULTS_FILE, LATENCY_FILE, COST_FILE, SUMMARY_FILE] {
        assert_eq!(fs::read(dir_a.path().join(f)).unwrap(), fs::read(dir_b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn aggregates_match_recomputation_from_csv() {
    let s = spec("schemes = [\"resource_only\"]\nseeds = [1, 2, 3]\n[control]\nhorizon = 10\ntrials = 2\n");
    let dir = tempfile::tempdir().unwrap();
    run_to_dir(&s, dir.path()).unwrap();
    let results = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    let (head, mut rd) = split_header(&results);
    assert!(head.starts_with("# wncs-results v1 spec_hash="));
    let periods: Vec<f64> = rd
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[8] == "optimal")
        .map(|r| r[3].parse().unwrap())
        .collect();
    assert_eq!(periods.len(), 3);
    let mean = periods.iter().sum::<f64>() / 3.0;
    let mut sorted = periods.clone();
    sorted.sort_by(f64::total_cmp);

    let latency = fs::read_to_string(dir.path().join(LATENCY_FILE)).unwrap();
    let (_, mut rd) = split_header(&latency);
    let rec = rd.records().next().unwrap().unwrap();
    assert_eq!(&rec[0], "resource_only");
    assert_eq!(&rec[2], "3");
    assert!((rec[4].parse::<f64>().unwrap() / mean - 1.0).abs() < 1e-12);
    assert_eq!(rec[5].parse::<f64>().unwrap(), sorted[1]);
}

#[test]
fn csv_schemas_carry_the_plot_columns() {
    let s = spec(
        "schemes = [\"resource_only\"]\nseeds = [1]\n[sweep]\naxis = \"downlink_power\"\nvalues = [2.0, 5.0]\n[control]\nhorizon = 5\ntrials = 1\n",
    );
    let dir = tempfile::tempdir().unwrap();
    run_to_dir(&s, dir.path()).unwrap();
    for (file, cols, rows) in [
        (RESULTS_FILE, &RESULT_COLUMNS[..], 2),
        (LATENCY_FILE, &LATENCY_COLUMNS[..], 2),
        (COST_FILE, &COST_COLUMNS[..], 10),
    ] {
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        let (head, mut rd) = split_header(&text);
        assert!(head.starts_with("# wncs-results v1"), "{file}");
        let headers: Vec<String> = rd.headers().unwrap().iter().map(str::to_string).collect();
        assert_eq!(headers, cols, "{file}");
        assert_eq!(rd.records().count(), rows, "{file}");
    }
    let results = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert!(results.lines().next().unwrap().ends_with("sweep_axis=downlink_power"));
    let t = ResultTable::read_csv(&results).unwrap();
    assert_eq!(t.sweep_axis, SweepAxis::DownlinkPower);
    assert_eq!(t.rows.iter().map(|r| r.sweep_value).collect::<Vec<_>>(), vec![Some(2.0), Some(5.0)]);
}

#[test]
fn dropped_column_is_reported() {
    let text = "# wncs-results v1 spec_hash=00\nscheme,seed\nproposed,1\n";
    let err = ResultTable::read_csv(text).unwrap_err().to_string();
    assert!(err.contains("T_s") && err.contains("assoc_counts"), "{err}");
}

#[test]
fn saved_solutions_validate() {
    let mut s = spec("schemes = [\"resource_only\", \"fdma\"]\nseeds = [6]\n[control]\nhorizon = 5\ntrials = 1\n");
    s.save_solutions = true;
    let dir = tempfile::tempdir().unwrap();
    run_to_dir(&s, dir.path()).unwrap();
    let mut n = 0;
    for entry in fs::read_dir(dir.path().join(SOLUTIONS_DIR)).unwrap() {
        let rec = SolutionRecord::load(&entry.unwrap().path()).unwrap();
        assert!(rec.validate().unwrap().all_ok());
        n += 1;
    }
    assert_eq!(n, 2);
}

#[test]
fn proposed_period_does_not_grow_with_downlink_power() {
    let s = spec(
        "schemes = [\"proposed\"]\nseeds = [1]\n[sweep]\naxis = \"downlink_power\"\nvalues = [1.0, 3.0, 5.0]\n[control]\nhorizon = 5\ntrials = 1\n",
    );
    let t = run(&s).unwrap();
    let periods: Vec<f64> = t.rows.iter().map(|r| r.period.unwrap()).collect();
    assert!(t.rows.iter().all(|r| r.is_optimal()));
    for w in periods.windows(2) {
        // Up to the relative SCA stopping tolerance.
        assert!(w[1] <= w[0] * (1.0 + 1e-4), "{periods:?}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    for body in [
        "schemes = []",
        "seeds = []",
        "[sweep]\naxis = \"cpu_freq\"\nvalues = [2e9, 1e9]",
        "[sweep]\naxis = \"cpu_freq\"\nvalues = []",
        "[sweep]\nvalues = [1.0]",
        "unknown_key = 1",
    ] {
        assert!(ExperimentSpec::parse(&format!("scenario = \"x\"\n{body}")).is_err(), "{body}");
    }
}
