use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wncs_core::benchmarks::{run_scheme, Scheme};
use wncs_core::config::load_scenario;
use wncs_core::harness::{
    run_to_dir, ExperimentSpec, ResultTable, SolutionRecord, Summary, Sweep, SweepAxis,
    RESULTS_FILE,
};
use wncs_core::model::{effective_gains, generate_channels};
use wncs_core::sca::ScaOptions;

#[derive(Parser)]
#[command(name = "wncs", version, about = "Association, power and slot co-design for wireless networked control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Comma-separated channel seeds, overriding the spec.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Output directory, overriding the spec.
    #[arg(long, env = "WNCS_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Comma-separated scheme ids: proposed, association_only, resource_only, fdma.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Closed-loop simulation length in samples.
    #[arg(long)]
    horizon: Option<usize>,
    /// Monte Carlo trials per row.
    #[arg(long)]
    trials: Option<usize>,
    /// Also write one JSON solution record per row.
    #[arg(long)]
    save_solutions: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    DownlinkPower,
    CpuFreq,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Sweep one parameter of a scenario.
    Sweep {
        axis: Axis,
        /// Strictly increasing comma-separated grid (W or cycles/s).
        #[arg(value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Optimize one scenario and seed with one scheme.
    Solve {
        scenario: PathBuf,
        #[arg(long, default_value = "proposed")]
        scheme: Scheme,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Solution record path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration SCA trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check a solution record against the exact constraints.
    Validate { solution: PathBuf },
    /// Convert a results CSV to JSON or normalized CSV.
    Export {
        table: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_flags(spec: &mut ExperimentSpec, flags: RunFlags) -> Result<()> {
    if let Some(seeds) = flags.seed_list {
        spec.seeds = seeds;
    }
    if let Some(dir) = flags.out_dir {
        spec.out_dir = dir;
    }
    if let Some(schemes) = flags.schemes {
        spec.schemes = schemes;
    }
    if let Some(h) = flags.horizon {
        spec.control.horizon = h;
    }
    if let Some(t) = flags.trials {
        spec.control.trials = t;
    }
    spec.save_solutions |= flags.save_solutions;
    spec.validate()?;
    Ok(())
}

fn execute(spec: &ExperimentSpec) -> Result<()> {
    let (table, summary) = run_to_dir(spec, &spec.out_dir)?;
    report(&table, &summary, &spec.out_dir);
    Ok(())
}

fn report(table: &ResultTable, summary: &Summary, dir: &Path) {
    for a in &summary.latency {
        let value = a.sweep_value.map(|v| format!(" @ {v}")).unwrap_or_default();
        match a.mean_period {
            Some(t) => println!(
                "{:<17}{value}: mean T {:.4} ms over {}/{} rows",
                a.scheme.id(),
                t * 1e3,
                a.feasible,
                a.rows
            ),
            None => println!("{:<17}{value}: no feasible rows out of {}", a.scheme.id(), a.rows),
        }
    }
    println!("{} rows written to {}", table.rows.len(), dir.join(RESULTS_FILE).display());
}

fn solve(scenario: &Path, scheme: Scheme, seed: u64, out: Option<PathBuf>, trace: Option<PathBuf>) -> Result<bool> {
    let scenario = load_scenario(scenario)?.with_seed(seed);
    let gains = effective_gains(&generate_channels(&scenario.topology, &scenario.network))?;
    let result = run_scheme(scheme, &scenario, &gains, ScaOptions::default())?;
    let record = SolutionRecord {
        scheme,
        sweep_value: None,
        seed,
        scenario,
        solution: result.solution,
    };
    let ok = record.validate()?.all_ok();
    let sol = &record.solution;
    eprintln!(
        "{scheme} seed {seed}: T = {:.6} ms, associations {:?}, status {:?}{}",
        sol.period() * 1e3,
        result.association_counts,
        sol.status,
        sol.binding.as_deref().map(|b| format!(", binding {b}")).unwrap_or_default()
    );
    if let Some(path) = trace {
        sol.trace.write_csv(fs::File::create(&path).with_context(|| path.display().to_string())?)?;
    }
    let json = serde_json::to_string_pretty(&record)?;
    match out {
        Some(path) => fs::write(&path, json).with_context(|| path.display().to_string())?,
        None => println!("{json}"),
    }
    Ok(ok)
}

fn validate(path: &Path) -> Result<bool> {
    let record = SolutionRecord::load(path).with_context(|| format!("reading {}", path.display()))?;
    let report = record.validate()?;
    for c in &report.checks {
        println!(
            "{} {:<22} violation {:+.3e}  {}",
            if c.ok { "ok  " } else { "FAIL" },
            c.constraint,
            c.violation,
            c.detail
        );
    }
    Ok(report.all_ok())
}

fn export(path: &Path, format: Format, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table = ResultTable::read_csv(&text)?;
    let mut buf = Vec::new();
    match format {
        Format::Json => buf.extend(table.to_json()?.into_bytes()),
        Format::Csv => table.write_csv(&mut buf)?,
    }
    match out {
        Some(p) => fs::write(&p, buf).with_context(|| p.display().to_string())?,
        None => print!("{}", String::from_utf8(buf)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { spec, flags } => ExperimentSpec::load(&spec)
            .with_context(|| format!("loading {}", spec.display()))
            .and_then(|mut s| {
                apply_flags(&mut s, flags)?;
                execute(&s)
            })
            .map(|_| true),
        Command::Sweep {
            axis,
            grid,
            scenario,
            flags,
        } => {
            let axis = match axis {
                Axis::DownlinkPower => SweepAxis::DownlinkPower,
                Axis::CpuFreq => SweepAxis::CpuFreq,
            };
            let base = format!("scenario = {:?}", scenario.display().to_string());
            ExperimentSpec::parse(&base)
                .map_err(anyhow::Error::from)
                .and_then(|mut s| {
                    s.scenario = scenario;
                    s.sweep = Sweep { axis, values: grid };
                    apply_flags(&mut s, flags)?;
                    execute(&s)
                })
                .map(|_| true)
        }
        Command::Solve {
            scenario,
            scheme,
            seed,
            out,
            trace,
        } => solve(&scenario, scheme, seed, out, trace),
        Command::Validate { solution } => validate(&solution),
        Command::Export { table, format, out } => export(&table, format, out).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

