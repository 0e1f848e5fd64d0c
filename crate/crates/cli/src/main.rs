//! `disorder-detect`: solve, run and verify the Markov regime switch-point
//! detector from the command line.
//!
//! Exit codes: 0 success, 1 validation/convergence/undecided failure,
//! 2 malformed input (including memory-budget refusals).

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use disorder_core::error::Error;
use disorder_core::gates::{GateConfig, GateReport};
use disorder_core::likelihood::SumConvention;
use disorder_core::model::{validate_model, DisorderModel, StateId};
use disorder_core::monte_carlo::{estimate_success, ExperimentConfig, ExperimentResult};
use disorder_core::solver::{problem_value, solve_threshold, ThresholdTable};
use disorder_core::{detector, gates};

#[derive(Parser)]
#[command(name = "disorder-detect", version, about = "Bayesian switch-point detection for Markov regime changes")]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against every type invariant.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Solve the stopping threshold by value iteration and write the table.
    Solve {
        #[arg(long)]
        model: PathBuf,
        /// Sup-norm convergence tolerance.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long = "max-iter", default_value_t = 100_000)]
        max_iter: usize,
        /// Table file destination (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Stream observations through the optimal rule.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: PathBuf,
        /// Observation stream: newline-delimited labels or single-column
        /// CSV with header `x` (stdin when omitted).
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Record per-step statistic/threshold/posterior.
        #[arg(long)]
        trace: bool,
        /// Report destination (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the success probability under the rule.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Path length per replication (default: residual prior mass 1e-6).
        #[arg(long)]
        horizon: Option<usize>,
        /// Record full traces for the first replication.
        #[arg(long)]
        trace: bool,
        /// Per-replication CSV destination.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Verify every formula against the brute-force oracle.
    OracleCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Report destination (text always goes to stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Deliberately mis-indexed payoff variants, for demonstrating the
        /// gate's discriminating power.
        #[arg(long, hide = true, value_enum, default_value_t = PayoffVariant::Standard)]
        payoff_variant: PayoffVariant,
    },
    /// Print the maximal success probability for a solved table.
    Value {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PayoffVariant {
    Standard,
    ScaledByP,
    ZerothRatio,
}

impl From<PayoffVariant> for SumConvention {
    fn from(v: PayoffVariant) -> Self {
        match v {
            PayoffVariant::Standard => SumConvention::Standard,
            PayoffVariant::ScaledByP => SumConvention::ScaledByP,
            PayoffVariant::ZerothRatio => SumConvention::IncludesZerothRatio,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads;
    let run = || match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    let code = match threads {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build();
            match pool {
                Ok(pool) => pool.install(run),
                Err(e) => {
                    eprintln!("error: cannot build thread pool: {e}");
                    2
                }
            }
        }
        Some(_) => {
            eprintln!("error: --threads must be positive");
            2
        }
        None => run(),
    };
    std::process::exit(code);
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Parse(_)
        | Error::Io(_)
        | Error::UnknownState { .. }
        | Error::TableMismatch(_)
        | Error::ImpossiblePath(_)
        | Error::BudgetExceeded { .. } => 2,
        Error::InvalidModel(_) | Error::Contract(_) => 1,
    }
}

fn load_model(path: &Path) -> Result<DisorderModel, Error> {
    DisorderModel::from_file(path)
}

/// Loads and validates, failing with the invalid-model error (exit 1).
fn load_valid_model(path: &Path) -> Result<DisorderModel, Error> {
    let model = load_model(path)?;
    let violations = validate_model(&model);
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(Error::InvalidModel(violations))
    }
}

fn run_command(command: Command) -> Result<i32, Error> {
    match command {
        Command::Validate { model } => cmd_validate(&model),
        Command::Solve {
            model,
            tol,
            max_iter,
            output,
        } => cmd_solve(&model, tol, max_iter, output.as_deref()),
        Command::Detect {
            model,
            table,
            stream,
            trace,
            output,
        } => cmd_detect(&model, &table, stream.as_deref(), trace, output.as_deref()),
        Command::Simulate {
            model,
            table,
            reps,
            seed,
            horizon,
            trace,
            output,
        } => cmd_simulate(&model, &table, reps, seed, horizon, trace, output.as_deref()),
        Command::OracleCheck {
            model,
            horizon,
            tol,
            output,
            payoff_variant,
        } => cmd_oracle_check(&model, horizon, tol, output.as_deref(), payoff_variant),
        Command::Value { model, table } => cmd_value(&model, &table),
    }
}

fn cmd_validate(model_path: &Path) -> Result<i32, Error> {
    let model = load_model(model_path)?;
    let violations = validate_model(&model);
    if violations.is_empty() {
        println!("model valid ({} states, hash {})", model.n_states(), model.hash_hex());
        Ok(0)
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Ok(1)
    }
}

fn cmd_solve(
    model_path: &Path,
    tol: f64,
    max_iter: usize,
    output: Option<&Path>,
) -> Result<i32, Error> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parse(format!("--tol must be positive, got {tol}")));
    }
    let model = load_valid_model(model_path)?;
    let (table, diag) = solve_threshold(&model, tol, max_iter)?;
    eprintln!(
        "iterations: {}  converged: {}  sup_delta: {}",
        diag.iterations,
        diag.converged,
        diag.sup_delta_history
            .last()
            .map(|d| format!("{d:.16e}"))
            .unwrap_or_else(|| "n/a".into())
    );
    match output {
        Some(path) => table.write_file(path)?,
        None => println!("{}", table.to_json()),
    }
    Ok(if table.converged { 0 } else { 1 })
}

/// Reads an observation stream: newline-delimited labels, or single-column
/// CSV whose first line is the header `x`.
fn read_stream(model: &DisorderModel, path: Option<&Path>) -> Result<Vec<StateId>, Error> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf)?;
            buf
        }
    };
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line == "x" {
            continue; // CSV header
        }
        match model.state_index(line) {
            Ok(id) => out.push(id),
            Err(_) => {
                return Err(Error::Parse(format!(
                    "label {line:?} outside state set at line {}",
                    idx + 1
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct DetectOutput<'a> {
    config: DetectEcho<'a>,
    #[serde(flatten)]
    report: &'a detector::DetectionReport,
}

#[derive(Serialize)]
struct DetectEcho<'a> {
    model: &'a Path,
    table: &'a Path,
    stream: Option<&'a Path>,
    trace: bool,
}

fn cmd_detect(
    model_path: &Path,
    table_path: &Path,
    stream: Option<&Path>,
    trace: bool,
    output: Option<&Path>,
) -> Result<i32, Error> {
    let model = load_valid_model(model_path)?;
    let table = ThresholdTable::from_file(table_path)?;
    table.check_model(&model)?;
    let observations = read_stream(&model, stream)?;
    let report = detector::run_to_decision(&model, &table, &observations, None, trace)?;
    let out = DetectOutput {
        config: DetectEcho {
            model: model_path,
            table: table_path,
            stream,
            trace,
        },
        report: &report,
    };
    let text = serde_json::to_string_pretty(&out).expect("report serializes");
    match output {
        Some(path) => std::fs::write(path, &text)?,
        None => println!("{text}"),
    }
    match report.stop_time {
        Some(tau) => {
            eprintln!("stopped at n = {tau}");
            Ok(0)
        }
        None => {
            eprintln!("undecided after {} observations", report.n_observations);
            Ok(1)
        }
    }
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    config: SimulateEcho<'a>,
    #[serde(flatten)]
    result: &'a ExperimentResult,
    traces: &'a [detector::DetectionReport],
}

#[derive(Serialize)]
struct SimulateEcho<'a> {
    model: &'a Path,
    table: &'a Path,
    replications: usize,
    seed: u64,
    horizon: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    model_path: &Path,
    table_path: &Path,
    reps: usize,
    seed: u64,
    horizon: Option<usize>,
    trace: bool,
    output: Option<&Path>,
) -> Result<i32, Error> {
    if reps == 0 {
        return Err(Error::Parse("--reps must be positive".into()));
    }
    let model = load_valid_model(model_path)?;
    let table = ThresholdTable::from_file(table_path)?;
    table.check_model(&model)?;
    let config = ExperimentConfig {
        replications: reps,
        seed,
        horizon,
        trace_reps: usize::from(trace),
    };
    let result = estimate_success(&model, &table, &config)?;
    println!(
        "success_rate: {:.16e}\nstandard_error: {}\ntheoretical_value: {:.16e}\nz_score: {}\nundecided: {}\nhorizon: {}",
        result.success_rate,
        result
            .standard_error
            .map(|v| format!("{v:.16e}"))
            .unwrap_or_else(|| "null".into()),
        result.theoretical_value,
        result
            .z_score
            .map(|v| format!("{v:.16e}"))
            .unwrap_or_else(|| "null".into()),
        result.undecided_count,
        result.horizon,
    );
    println!(
        "summary: rate {:.4} vs value {:.4} ({} reps)",
        result.success_rate, result.theoretical_value, result.replications
    );
    if let Some(path) = output {
        let mut file = std::fs::File::create(path)?;
        result.write_csv(&mut file)?;
        let summary_path = path.with_extension("summary.json");
        let summary = SimulateOutput {
            config: SimulateEcho {
                model: model_path,
                table: table_path,
                replications: reps,
                seed,
                horizon,
            },
            result: &result,
            traces: &result.traces,
        };
        std::fs::write(
            &summary_path,
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        eprintln!("wrote {} and {}", path.display(), summary_path.display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct OracleCheckOutput<'a> {
    config: OracleCheckEcho<'a>,
    #[serde(flatten)]
    report: &'a GateReport,
}

#[derive(Serialize)]
struct OracleCheckEcho<'a> {
    model: &'a Path,
    horizon: usize,
    solver_tolerance: f64,
}

fn cmd_oracle_check(
    model_path: &Path,
    horizon: usize,
    tol: f64,
    output: Option<&Path>,
    payoff_variant: PayoffVariant,
) -> Result<i32, Error> {
    let model = load_valid_model(model_path)?;
    let config = GateConfig {
        horizon,
        payoff_convention: payoff_variant.into(),
        solver_tolerance: tol,
        ..GateConfig::default()
    };
    let report = gates::run_gates(&model, &config)?;
    print!("{}", report.render_text());
    if let Some(path) = output {
        let out = OracleCheckOutput {
            config: OracleCheckEcho {
                model: model_path,
                horizon,
                solver_tolerance: tol,
            },
            report: &report,
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&out).expect("report serializes"),
        )?;
    }
    Ok(if report.all_pass { 0 } else { 1 })
}

fn cmd_value(model_path: &Path, table_path: &Path) -> Result<i32, Error> {
    let model = load_valid_model(model_path)?;
    let table = ThresholdTable::from_file(table_path)?;
    table.check_model(&model)?;
    let value = problem_value(&model, &table)?;
    println!("{value:.16e}");
    Ok(0)
}
