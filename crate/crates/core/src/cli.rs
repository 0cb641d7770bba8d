//! `rbsde` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bsde::{BackwardSolution, Scenario};
use crate::config::{parse_config, Command, Manifest, Overrides, RunConfig, ScenarioSource};
use crate::error::{Error, Result};
use crate::harness::{emit_report, run_sweep, SweepPlan};
use crate::penalty::{
    backward_solve_penalized, default_band, default_test_processes, penalty_metrics,
    skorokhod_diagnostics, PenaltyMetrics, SkorokhodReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "rbsde",
    version,
    about = "Penalization solver for reflected BSDEs in moving convex domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Check a scenario (tube, driver bound, terminal values) without solving.
    Validate(RunArgs),
    /// Solve the penalized equation at one penalty level.
    Solve(RunArgs),
    /// Sweep penalty levels and fit convergence rates.
    Sweep(RunArgs),
    /// Solve at one level and check the Skorokhod conditions.
    Diagnose(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    scenario: Option<String>,
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long = "n-penalty")]
    n_penalty: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total degree of the polynomial regression basis.
    #[arg(long = "basis-degree")]
    basis_degree: Option<usize>,
    /// Also write the full solution as a binary file (solve only).
    #[arg(long = "dump-binary")]
    dump_binary: bool,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RBSDE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::Config(format!(
            "RBSDE_THREADS must be a non-negative integer, got `{raw}`"
        ))
    })?;
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_CONFIG,
            };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<String> {
    configure_threads()?;
    let (command, args) = match cli.command {
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Diagnose(a) => (Command::Diagnose, a),
    };
    let source = match (&args.scenario, &args.config) {
        (Some(name), _) => ScenarioSource::Builtin(name.clone()),
        (None, Some(path)) => ScenarioSource::File(path.clone()),
        (None, None) => {
            return Err(Error::Config(
                "either --scenario or --config is required".into(),
            ))
        }
    };
    let overrides = Overrides {
        steps: args.steps,
        paths: args.paths,
        n_penalty: args.n_penalty,
        seed: args.seed,
        replications: args.replications,
        out_dir: args.out.clone(),
        basis_degree: args.basis_degree,
    };
    let (run, scenario) = parse_config(command, &source, &overrides)?;
    fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
    Manifest::new(&run).write(&run.out_dir)?;
    match command {
        Command::Validate => validate(&run, &scenario),
        Command::Solve => solve(&run, &scenario, args.dump_binary),
        Command::Sweep => sweep(&run, &scenario),
        Command::Diagnose => diagnose(&run, &scenario),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn summary_line(y0: &[f64], m: &PenaltyMetrics) -> String {
    format!(
        "Y0_mean={} tv_lambda={:.6e} sup_dist_sq={:.6e}",
        fmt_vec(y0),
        m.tv_lambda.estimate,
        m.sup_dist_sq.estimate
    )
}

fn validate(run: &RunConfig, scenario: &Scenario) -> Result<String> {
    let bundle = scenario.simulate(run.paths, run.seed)?;
    scenario.terminal_values(&bundle, true)?;
    Ok(format!(
        "scenario {} is valid: d={}, N={}, M={}, c_f={}",
        scenario.name,
        scenario.dim(),
        scenario.grid.steps(),
        run.paths,
        scenario.lipschitz
    ))
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    scenario: &'a str,
    n: u64,
    steps: usize,
    paths: usize,
    seed: u64,
    y0_mean: Vec<f64>,
    metrics: PenaltyMetrics,
    max_condition: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    skorokhod: Option<SkorokhodReport>,
}

fn solve_once(run: &RunConfig, scenario: &Scenario) -> Result<(BackwardSolution, PenaltyMetrics)> {
    let bundle = scenario.simulate(run.paths, run.seed)?;
    let sol = backward_solve_penalized(scenario, &bundle, run.basis, run.n_penalty)?;
    let metrics = penalty_metrics(&sol, &scenario.tube)?;
    Ok((sol, metrics))
}

fn write_json<T: Serialize>(run: &RunConfig, name: &str, value: &T) -> Result<()> {
    let path = run.out_dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn solve_output<'a>(
    run: &'a RunConfig,
    sol: &BackwardSolution,
    metrics: PenaltyMetrics,
    skorokhod: Option<SkorokhodReport>,
) -> SolveOutput<'a> {
    SolveOutput {
        scenario: &run.scenario,
        n: run.n_penalty.get(),
        steps: sol.steps(),
        paths: sol.paths(),
        seed: run.seed,
        y0_mean: sol.y0_mean(),
        metrics,
        max_condition: sol
            .regression
            .iter()
            .map(|r| r.condition)
            .fold(1.0, f64::max),
        skorokhod,
    }
}

fn solve(run: &RunConfig, scenario: &Scenario, dump_binary: bool) -> Result<String> {
    let (sol, metrics) = solve_once(run, scenario)?;
    sol.write_summary_csv(&run.out_dir.join("solution.csv"))?;
    if dump_binary {
        sol.write_binary(&run.out_dir.join("solution.bin"))?;
    }
    write_json(run, "solve.json", &solve_output(run, &sol, metrics, None))?;
    Ok(summary_line(&sol.y0_mean(), &metrics))
}

fn diagnose(run: &RunConfig, scenario: &Scenario) -> Result<String> {
    let (sol, metrics) = solve_once(run, scenario)?;
    let band = default_band(&sol, &scenario.tube)?;
    let tests = default_test_processes(&scenario.tube)?;
    let report = skorokhod_diagnostics(&sol, &scenario.tube, band, &tests)?;
    sol.write_summary_csv(&run.out_dir.join("solution.csv"))?;
    write_json(run, "skorokhod.json", &report)?;
    let line = summary_line(&sol.y0_mean(), &metrics);
    write_json(
        run,
        "solve.json",
        &solve_output(run, &sol, metrics, Some(report.clone())),
    )?;
    Ok(format!(
        "{line} alignment_min={} interior_mass_fraction={:.3e} variational_gap={:.3e}",
        report
            .alignment_min
            .map_or("none".into(), |a| format!("{a:.12}")),
        report.interior_mass_fraction,
        report.variational_gap
    ))
}

fn sweep(run: &RunConfig, scenario: &Scenario) -> Result<String> {
    let plan = SweepPlan {
        scenario: scenario.clone(),
        basis: run.basis,
        n_list: run.n_list.clone(),
        paths: run.paths,
        replications: run.replications,
        seed_base: run.seed,
    };
    let report = match run_sweep(&plan) {
        Ok(r) => r,
        Err(e) => {
            emit_report(&e.partial, &run.out_dir)?;
            return Err(e.source);
        }
    };
    emit_report(&report, &run.out_dir)?;
    let slope = |f: &Option<crate::harness::RateFit>| {
        f.as_ref().map_or("null".to_string(), |r| {
            format!("{:.3}±{:.3}", r.slope, r.half_width)
        })
    };
    let last = report.levels.last();
    Ok(format!(
        "n_max={} tv_lambda={:.6e} sup_dist_sq={:.6e} slope_sup={} slope_int={} slope_cauchy={}",
        last.map_or(0, |l| l.n),
        last.map_or(0.0, |l| l.tv_lambda.estimate),
        last.map_or(0.0, |l| l.sup_dist_sq.estimate),
        slope(&report.slope_sup),
        slope(&report.slope_int),
        slope(&report.slope_cauchy)
    ))
}
