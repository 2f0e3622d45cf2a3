//! Experiment runner: schemes over seeds and sweeps, closed-loop cost
//! simulation, result tables and their aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::{run_scheme, Scheme};
use crate::config::{load_scenario, Scenario};
use crate::control::{simulate_closed_loop_with, NoiseModel, SimOptions};
use crate::error::{Error, Result};
use crate::model::{effective_gains, generate_channels};
use crate::sca::{validate_solution, CoDesignSolution, Problem, ScaOptions, SolutionStatus};

/// First line of every results CSV.
pub const CSV_SCHEMA: &str = "wncs-results v1";

pub const RESULT_COLUMNS: [&str; 9] = [
    "scheme",
    "sweep_value",
    "seed",
    "T_s",
    "assoc_counts",
    "j_ave",
    "stability_margin",
    "wall_time_s",
    "status",
];

pub const COST_COLUMNS: [&str; 4] = ["scheme", "sweep_value", "sample", "j_ave"];

pub const LATENCY_COLUMNS: [&str; 6] = ["scheme", "sweep_value", "rows", "feasible", "mean_T_s", "median_T_s"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    None,
    DownlinkPower,
    CpuFreq,
}

impl SweepAxis {
    pub fn id(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::DownlinkPower => "downlink_power",
            SweepAxis::CpuFreq => "cpu_freq",
        }
    }

    pub fn apply(self, scenario: &Scenario, value: f64) -> Scenario {
        match self {
            SweepAxis::None => scenario.clone(),
            SweepAxis::DownlinkPower => scenario.with_downlink_power(value),
            SweepAxis::CpuFreq => scenario.with_cpu_freq(value),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SweepAxis::None),
            "downlink_power" => Ok(SweepAxis::DownlinkPower),
            "cpu_freq" => Ok(SweepAxis::CpuFreq),
            other => Err(Error::Spec(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            axis: SweepAxis::None,
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSim {
    pub horizon: usize,
    pub trials: usize,
    pub noise: NoiseModel,
}

impl Default for ControlSim {
    fn default() -> Self {
        ControlSim {
            horizon: 200,
            trials: 100,
            noise: NoiseModel::Integrated,
        }
    }
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (1..=20).collect()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment. `scenario` is resolved relative to the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: PathBuf,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub control: ControlSim,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Wall times make output files differ between runs, so they are
    /// written as 0 unless asked for.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub save_solutions: bool,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads a spec and makes its scenario path absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec = Self::parse(&fs::read_to_string(path)?)?;
        if spec.scenario.is_relative() {
            spec.scenario = path.parent().unwrap_or(Path::new(".")).join(&spec.scenario);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Spec("scheme list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Spec("seed list is empty".into()));
        }
        match self.sweep.axis {
            SweepAxis::None if !self.sweep.values.is_empty() => {
                return Err(Error::Spec("sweep values given without an axis".into()));
            }
            SweepAxis::None => {}
            _ if self.sweep.values.is_empty() => return Err(Error::Spec("sweep grid is empty".into())),
            _ => {}
        }
        if self.sweep.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Spec("sweep values must be finite and positive".into()));
        }
        if self.sweep.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec("sweep grid must be strictly increasing".into()));
        }
        if self.control.horizon == 0 {
            return Err(Error::Spec("control horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Sweep points; a spec without a sweep has a single point.
    pub fn sweep_points(&self) -> Vec<Option<f64>> {
        if self.sweep.axis == SweepAxis::None {
            vec![None]
        } else {
            self.sweep.values.iter().copied().map(Some).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    /// Period in seconds; absent when no solution was produced.
    pub period: Option<f64>,
    pub association_counts: Vec<usize>,
    pub j_ave: Option<f64>,
    pub stability_margin: Option<f64>,
    pub wall_time_s: f64,
    pub status: String,
}

impl ResultRow {
    pub fn is_optimal(&self) -> bool {
        self.status == "optimal"
    }
}

/// `J_ave` after 1..=horizon samples, averaged over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSeries {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub j_ave: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub spec_hash: String,
    pub sweep_axis: SweepAxis,
    pub rows: Vec<ResultRow>,
    pub series: Vec<CostSeries>,
}

/// Run output kept next to the table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub scenario: Scenario,
    pub solution: CoDesignSolution,
}

impl SolutionRecord {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Re-derives the channels and runs the exact validator.
    pub fn validate(&self) -> Result<crate::sca::ValidationReport> {
        let problem = Problem::from_scenario(self.scenario.clone(), self.scheme.protocol(), ScaOptions::default())?;
        Ok(validate_solution(&problem, &self.solution))
    }
}

/// SHA-256 over the spec and the scenario it resolves to.
pub fn spec_hash(spec: &ExperimentSpec, scenario: &Scenario) -> Result<String> {
    let mut h = Sha256::new();
    let mut canonical = spec.clone();
    canonical.scenario = PathBuf::new();
    canonical.out_dir = PathBuf::new();
    h.update(serde_json::to_vec(&canonical)?);
    h.update(serde_json::to_vec(scenario)?);
    Ok(h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn trial_seed(seed: u64, trial: usize, plant: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((trial as u64) << 24) ^ plant as u64
}

/// Mean over trials of the running `J_ave` when plant `k` runs at period
/// `T` with outage `outage[k]`. Trials share random numbers across calls
/// with the same seed.
pub fn control_cost_series(scenario: &Scenario, period: f64, outage: &[f64], seed: u64, sim: &ControlSim) -> Vec<f64> {
    let opts = SimOptions {
        noise: sim.noise,
        ..SimOptions::default()
    };
    let mut acc = vec![0.0; sim.horizon];
    for trial in 0..sim.trials {
        for (k, &eps) in outage.iter().enumerate() {
            let traj = simulate_closed_loop_with(&scenario.plant, period, eps, sim.horizon, trial_seed(seed, trial, k), &opts);
            let mut running = 0.0;
            for (n, c) in traj.cost.iter().skip(1).enumerate() {
                running += c;
                acc[n] += running / (n + 1) as f64;
            }
        }
    }
    let trials = sim.trials.max(1) as f64;
    acc.iter().map(|v| v / trials).collect()
}

struct Job {
    scheme: Scheme,
    sweep_value: Option<f64>,
    seed: u64,
}

fn run_job(spec: &ExperimentSpec, base: &Scenario, job: &Job) -> (ResultRow, Option<CostSeries>, Option<SolutionRecord>) {
    let scenario = match job.sweep_value {
        Some(v) => spec.sweep.axis.apply(base, v),
        None => base.clone(),
    }
    .with_seed(job.seed);
    let start = Instant::now();
    let gains = effective_gains(&generate_channels(&scenario.topology, &scenario.network));
    let outcome = gains
        .as_ref()
        .map_err(|e| Error::Domain(e.to_string()))
        .and_then(|g| run_scheme(job.scheme, &scenario, g, ScaOptions::default()));
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = ResultRow {
        scheme: job.scheme,
        sweep_value: job.sweep_value,
        seed: job.seed,
        period: None,
        association_counts: Vec::new(),
        j_ave: None,
        stability_margin: None,
        wall_time_s: if spec.record_wall_time { elapsed } else { 0.0 },
        status: String::new(),
    };
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{} seed {} sweep {:?}: {e}", job.scheme, job.seed, job.sweep_value);
            row.status = match e {
                Error::Initialization(_) | Error::Infeasible { .. } => "infeasible".into(),
                _ => "error".into(),
            };
            return (row, None, None);
        }
    };
    let sol = &result.solution;
    row.period = Some(sol.period());
    row.association_counts = result.association_counts.clone();
    row.stability_margin = Some(sol.stability_margin);
    // Rows are only marked optimal after an independent validation pass.
    let gains = gains.expect("solved with these gains");
    let problem = Problem::new(scenario.clone(), gains, job.scheme.protocol(), ScaOptions::default());
    let valid = problem.map(|p| validate_solution(&p, sol).all_ok()).unwrap_or(false);
    row.status = match sol.status {
        SolutionStatus::Optimal if valid => "optimal",
        SolutionStatus::MaxIter if valid => "max_iter",
        _ => "infeasible",
    }
    .into();
    let series = (row.status != "infeasible").then(|| {
        let j = control_cost_series(&scenario, sol.period(), &sol.outage, job.seed, &spec.control);
        row.j_ave = j.last().copied();
        CostSeries {
            scheme: job.scheme,
            sweep_value: job.sweep_value,
            seed: job.seed,
            j_ave: j,
        }
    });
    let record = spec.save_solutions.then(|| SolutionRecord {
        scheme: job.scheme,
        sweep_value: job.sweep_value,
        seed: job.seed,
        scenario,
        solution: result.solution,
    });
    (row, series, record)
}

/// Runs every (scheme, sweep value, seed) in parallel; rows come back in
/// that order whatever the scheduling.
pub fn run(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_with(spec, |_| {})
}

/// [`run`] with a callback per saved solution record.
pub fn run_with(spec: &ExperimentSpec, mut on_record: impl FnMut(&SolutionRecord)) -> Result<ResultTable> {
    spec.validate()?;
    let base = load_scenario(&spec.scenario)?;
    let hash = spec_hash(spec, &base)?;
    let mut jobs = Vec::new();
    for &scheme in &spec.schemes {
        for sweep_value in spec.sweep_points() {
            for &seed in &spec.seeds {
                jobs.push(Job {
                    scheme,
                    sweep_value,
                    seed,
                });
            }
        }
    }
    let outputs: Vec<_> = jobs.par_iter().map(|job| run_job(spec, &base, job)).collect();
    let mut rows = Vec::with_capacity(outputs.len());
    let mut series = Vec::new();
    for (row, s, record) in outputs {
        if let Some(r) = &record {
            on_record(r);
        }
        rows.push(row);
        series.extend(s);
    }
    Ok(ResultTable {
        spec_hash: hash,
        sweep_axis: spec.sweep.axis,
        rows,
        series,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Spec(format!("column {field}: `{s}` is not a number")))
}

impl ResultTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {CSV_SCHEMA} spec_hash={} sweep_axis={}", self.spec_hash, self.sweep_axis.id())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULT_COLUMNS)?;
        for r in &self.rows {
            let counts: Vec<String> = r.association_counts.iter().map(|c| c.to_string()).collect();
            w.write_record([
                r.scheme.id().to_string(),
                opt(r.sweep_value),
                r.seed.to_string(),
                opt(r.period),
                counts.join(";"),
                opt(r.j_ave),
                opt(r.stability_margin),
                r.wall_time_s.to_string(),
                r.status.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a results CSV back; cost series are not part of it.
    pub fn read_csv(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let meta = header
            .strip_prefix("# ")
            .and_then(|h| h.strip_prefix(CSV_SCHEMA))
            .ok_or_else(|| Error::Spec(format!("missing `# {CSV_SCHEMA}` header line")))?;
        let field = |key: &str| {
            meta.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .map(str::to_string)
        };
        let spec_hash = field("spec_hash").ok_or_else(|| Error::Spec("header lacks spec_hash".into()))?;
        let sweep_axis = field("sweep_axis").map_or(Ok(SweepAxis::None), |s| s.parse())?;
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let headers = rd.headers()?.clone();
        let missing: Vec<&str> = RESULT_COLUMNS.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
        if !missing.is_empty() {
            return Err(Error::Spec(format!("missing columns: {}", missing.join(", "))));
        }
        let idx = |c: &str| headers.iter().position(|h| h == c).expect("checked above");
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let get = |c: &str| rec.get(idx(c)).unwrap_or("");
            let counts = get("assoc_counts");
            rows.push(ResultRow {
                scheme: get("scheme").parse()?,
                sweep_value: parse_opt("sweep_value", get("sweep_value"))?,
                seed: get("seed").parse().map_err(|_| Error::Spec(format!("bad seed `{}`", get("seed"))))?,
                period: parse_opt("T_s", get("T_s"))?,
                association_counts: if counts.is_empty() {
                    Vec::new()
                } else {
                    counts
                        .split(';')
                        .map(|c| c.parse().map_err(|_| Error::Spec(format!("bad count `{c}`"))))
                        .collect::<Result<_>>()?
                },
                j_ave: parse_opt("j_ave", get("j_ave"))?,
                stability_margin: parse_opt("stability_margin", get("stability_margin"))?,
                wall_time_s: parse_opt("wall_time_s", get("wall_time_s"))?.unwrap_or(0.0),
                status: get("status").to_string(),
            });
        }
        Ok(ResultTable {
            spec_hash,
            sweep_axis,
            rows,
            series: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Latency statistics over the optimal rows of one (scheme, sweep value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyAggregate {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub rows: usize,
    pub feasible: usize,
    pub mean_period: Option<f64>,
    pub median_period: Option<f64>,
}

/// How often each per-BS association count vector occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationHistogram {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAggregate {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub seeds: usize,
    pub j_ave: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spec_hash: String,
    pub latency: Vec<LatencyAggregate>,
    pub association: Vec<AssociationHistogram>,
    pub control_cost: Vec<CostAggregate>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

type Key = (Scheme, Option<u64>);

fn key(scheme: Scheme, v: Option<f64>) -> Key {
    (scheme, v.map(f64::to_bits))
}

/// Groups in first-appearance order.
fn groups<'a, T>(items: &'a [T], key_of: impl Fn(&T) -> Key) -> Vec<(Key, Vec<&'a T>)> {
    let mut out: Vec<(Key, Vec<&T>)> = Vec::new();
    for it in items {
        let k = key_of(it);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(it),
            None => out.push((k, vec![it])),
        }
    }
    out
}

/// Per-figure aggregates: mean/median period, association histograms and
/// the trial-averaged cost series (also averaged over seeds).
pub fn summarize(table: &ResultTable) -> Summary {
    let mut latency = Vec::new();
    let mut association = Vec::new();
    for ((scheme, v), rows) in groups(&table.rows, |r| key(r.scheme, r.sweep_value)) {
        let sweep_value = v.map(f64::from_bits);
        let mut periods: Vec<f64> = rows.iter().filter(|r| r.is_optimal()).filter_map(|r| r.period).collect();
        periods.sort_by(f64::total_cmp);
        latency.push(LatencyAggregate {
            scheme,
            sweep_value,
            rows: rows.len(),
            feasible: periods.len(),
            mean_period: (!periods.is_empty()).then(|| periods.iter().sum::<f64>() / periods.len() as f64),
            median_period: median(&periods),
        });
        let mut counts = BTreeMap::new();
        for r in rows.iter().filter(|r| r.is_optimal()) {
            let label: Vec<String> = r.association_counts.iter().map(|c| c.to_string()).collect();
            *counts.entry(label.join(";")).or_insert(0) += 1;
        }
        association.push(AssociationHistogram {
            scheme,
            sweep_value,
            counts,
        });
    }
    let control_cost = groups(&table.series, |s| key(s.scheme, s.sweep_value))
        .into_iter()
        .map(|((scheme, v), series)| {
            let len = series.iter().map(|s| s.j_ave.len()).min().unwrap_or(0);
            let j_ave = (0..len)
                .map(|n| series.iter().map(|s| s.j_ave[n]).sum::<f64>() / series.len() as f64)
                .collect();
            CostAggregate {
                scheme,
                sweep_value: v.map(f64::from_bits),
                seeds: series.len(),
                j_ave,
            }
        })
        .collect();
    Summary {
        spec_hash: table.spec_hash.clone(),
        latency,
        association,
        control_cost,
    }
}

impl Summary {
    pub fn write_latency_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {CSV_SCHEMA} spec_hash={}", self.spec_hash)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LATENCY_COLUMNS)?;
        for a in &self.latency {
            w.write_record([
                a.scheme.id().to_string(),
                opt(a.sweep_value),
                a.rows.to_string(),
                a.feasible.to_string(),
                opt(a.mean_period),
                opt(a.median_period),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_cost_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {CSV_SCHEMA} spec_hash={}", self.spec_hash)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COST_COLUMNS)?;
        for c in &self.control_cost {
            for (n, j) in c.j_ave.iter().enumerate() {
                w.write_record([c.scheme.id().to_string(), opt(c.sweep_value), (n + 1).to_string(), j.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Files written by [`write_outputs`].
pub const RESULTS_FILE: &str = "results.csv";
pub const LATENCY_FILE: &str = "latency.csv";
pub const COST_FILE: &str = "control_cost.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SOLUTIONS_DIR: &str = "solutions";

pub fn solution_file_name(record: &SolutionRecord) -> String {
    match record.sweep_value {
        Some(v) => format!("{}_{v}_{}.json", record.scheme.id(), record.seed),
        None => format!("{}_{}.json", record.scheme.id(), record.seed),
    }
}

/// Writes the table, the aggregates and the cost series into `dir`.
pub fn write_outputs(table: &ResultTable, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    table.write_csv(fs::File::create(dir.join(RESULTS_FILE))?)?;
    let summary = summarize(table);
    summary.write_latency_csv(fs::File::create(dir.join(LATENCY_FILE))?)?;
    summary.write_cost_csv(fs::File::create(dir.join(COST_FILE))?)?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Runs a spec and writes every output, including solution records when
/// the spec asks for them.
pub fn run_to_dir(spec: &ExperimentSpec, dir: &Path) -> Result<(ResultTable, Summary)> {
    let sol_dir = dir.join(SOLUTIONS_DIR);
    if spec.save_solutions {
        fs::create_dir_all(&sol_dir)?;
    }
    let mut write_err = None;
    let table = run_with(spec, |r| {
        let res = serde_json::to_string(r)
            .map_err(Error::from)
            .and_then(|s| fs::write(sol_dir.join(solution_file_name(r)), s).map_err(Error::from));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let summary = write_outputs(&table, dir)?;
    Ok((table, summary))
}
