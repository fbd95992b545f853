//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical
//! failure. Tables go to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::allocator::{best_gamma, default_gamma_grid, solve_closed_form, Rule, RuleError};
use crate::experiments::{
    allocation_row, allocation_table_columns, attractiveness_sweep, budget_for_target,
    budget_table, comparison_table, scaling_table, ExperimentError, ExperimentTable, SweepSpec,
};
use crate::model::{evaluate, Allocation, ModelError};
use crate::scenario_file::{load_scenario, LoadError, ScenarioFile};
use crate::simulate::{sample_choices, SampleError, OPT_OUT};
use crate::solver::{solve_numerical, OracleConfig, SolverError};
use crate::{Scenario64, SolveReport64};

/// Caps the number of worker threads.
pub const THREADS_ENV: &str = "CHOICEALLOC_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "choicealloc",
    version,
    about = "Optimal and heuristic protective budget allocation"
)]
struct Cli {
    /// Output format for tables.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    output: OutputFormat,
    /// Relative tolerance used by `verify`.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tolerance: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form optimal allocation.
    Solve { file: PathBuf },
    /// Probabilities at a named allocation from the file.
    Evaluate {
        file: PathBuf,
        #[arg(long)]
        allocation: String,
    },
    /// Heuristic rules at fixed gammas, or at their best grid gamma with `--gamma grid`.
    Compare {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "cle,celp")]
        rules: Vec<Rule>,
        #[arg(long, default_value = "grid")]
        gamma: String,
    },
    /// Optimal vs best-gamma heuristics over attractiveness pairs (a1, 10 - a1).
    Sweep {
        file: PathBuf,
        #[arg(long, value_delimiter = ',')]
        alpha1: Vec<f64>,
    },
    /// Optimal allocations with every attractiveness scaled by k.
    Scale {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,1.1,1.2,1.3,1.4")]
        k: Vec<f64>,
    },
    /// Budget needed for the optimum to reach a target overall probability.
    BudgetFor {
        file: PathBuf,
        #[arg(long)]
        target: f64,
        /// Optional attractiveness scale factors; one row per factor.
        #[arg(long, value_delimiter = ',')]
        k: Vec<f64>,
    },
    /// Monte Carlo choice counts at an allocation.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value = "optimal")]
        allocation: String,
        #[arg(long, default_value_t = 1_000_000)]
        draws: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the closed form against the numerical oracle.
    Verify { file: PathBuf },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::RouteMismatch { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<RuleError> for CliError {
    fn from(e: RuleError) -> Self {
        match e {
            RuleError::Model(m) => m.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model(m) => m.into(),
            ExperimentError::Rule(r) => r.into(),
            ExperimentError::TargetMissed { .. } | ExperimentError::Csv(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SolverError<f64>> for CliError {
    fn from(e: SolverError<f64>) -> Self {
        match e {
            SolverError::Model(m) => m.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::Model(m) => m.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    // the pool may run work on other threads, so output is buffered
    let (mut out_buf, mut err_buf) = (Vec::new(), Vec::new());
    let result = match &pool {
        Some(p) => p.install(|| execute(&cli, &mut out_buf, &mut err_buf)),
        None => execute(&cli, &mut out_buf, &mut err_buf),
    };
    let flushed = stdout.write_all(&out_buf).and_then(|_| stdout.flush());
    let _ = stderr.write_all(&err_buf);
    if let Err(e) = flushed {
        let _ = writeln!(stderr, "error: cannot write output: {e}");
        return EXIT_USAGE;
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>, String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| e.to_string())
}

fn emit(cli: &Cli, table: &ExperimentTable<f64>, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Usage(format!("cannot write output: {e}"));
    match cli.output {
        OutputFormat::Csv => table
            .write_csv(&mut *out)
            .map_err(|e| CliError::Usage(format!("cannot write output: {e}"))),
        OutputFormat::Json => {
            let text = serde_json::to_string_pretty(table)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            writeln!(out, "{text}").map_err(io)
        }
    }
}

fn parse_gammas(spec: &str) -> Result<Option<Vec<f64>>, CliError> {
    if spec.trim().eq_ignore_ascii_case("grid") {
        return Ok(None);
    }
    spec.split(',')
        .map(|g| {
            g.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("invalid gamma `{g}`")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn named_allocation(file: &ScenarioFile, name: &str) -> Result<Allocation<f64>, CliError> {
    if name == "optimal" && !file.allocations.contains_key(name) {
        return Ok(solve_closed_form(&file.scenario)?.allocation);
    }
    file.allocations.get(name).cloned().ok_or_else(|| {
        let known: Vec<&str> = file.allocations.keys().map(String::as_str).collect();
        CliError::Input(format!(
            "no allocation named `{name}` (available: optimal, {})",
            known.join(", ")
        ))
    })
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve { file } => {
            let f = load_scenario(file)?;
            let report = solve_closed_form(&f.scenario)?;
            let _ = writeln!(
                err,
                "multiplier={:e} stationarity_residual={:e}",
                report.multiplier, report.stationarity_residual
            );
            let table = comparison_table("solve", &f.scenario, true, &[], &[])?;
            emit(cli, &table, out)
        }
        Command::Evaluate { file, allocation } => {
            let f = load_scenario(file)?;
            let x = named_allocation(&f, allocation)?;
            let e = evaluate(&f.scenario, &x)?;
            let mut columns = allocation_table_columns(&f.scenario);
            columns.push("p_opt_out".into());
            columns.push("surrogate".into());
            let mut table = ExperimentTable::new("evaluate", columns);
            let mut row = allocation_row(&f.scenario, &x, &e);
            row.push(e.opt_out);
            row.push(e.surrogate);
            table.push(allocation.clone(), row);
            emit(cli, &table, out)
        }
        Command::Compare { file, rules, gamma } => {
            let f = load_scenario(file)?;
            let table = match parse_gammas(gamma)? {
                Some(gammas) => comparison_table("compare", &f.scenario, false, rules, &gammas)?,
                None => {
                    let mut table =
                        ExperimentTable::new("compare", allocation_table_columns(&f.scenario));
                    for &rule in rules {
                        let best = best_gamma(&f.scenario, rule, &default_gamma_grid())?;
                        table.push(
                            format!("{}({})", rule.name(), best.gamma),
                            allocation_row(&f.scenario, &best.allocation, &best.evaluation),
                        );
                    }
                    table
                }
            };
            emit(cli, &table, out)
        }
        Command::Sweep { file, alpha1 } => {
            let f = load_scenario(file)?;
            let spec = if alpha1.is_empty() {
                SweepSpec::default_pairs()
            } else {
                SweepSpec::from_first_alphas(alpha1)?
            };
            let table = attractiveness_sweep(&f.scenario, &spec, &default_gamma_grid())?;
            emit(cli, &table, out)
        }
        Command::Scale { file, k } => {
            let f = load_scenario(file)?;
            let table = scaling_table(&f.scenario, &SweepSpec::scale_factors(k.clone())?)?;
            emit(cli, &table, out)
        }
        Command::BudgetFor { file, target, k } => {
            let f = load_scenario(file)?;
            let table = if k.is_empty() {
                let budget = budget_for_target(&f.scenario, *target)?;
                let overall = solve_closed_form(&f.scenario.with_budget(budget)?)?
                    .evaluation
                    .overall;
                let mut t = ExperimentTable::new(
                    "budget_for_target",
                    vec!["budget".into(), "p_overall".into()],
                );
                t.push("target", vec![budget, overall]);
                t
            } else {
                budget_table(&f.scenario, &SweepSpec::scale_factors(k.clone())?, *target)?
            };
            emit(cli, &table, out)
        }
        Command::Simulate {
            file,
            allocation,
            draws,
            seed,
        } => {
            let f = load_scenario(file)?;
            let x = named_allocation(&f, allocation)?;
            let e = evaluate(&f.scenario, &x)?;
            let sample = sample_choices(&f.scenario, &x, *draws, *seed)?;
            let mut table = ExperimentTable::new(
                "simulate",
                vec!["count".into(), "frequency".into(), "probability".into()],
            );
            let probabilities = e
                .per_location
                .iter()
                .copied()
                .chain(std::iter::once(e.opt_out));
            for ((label, count), p) in sample
                .keyed_counts(&f.scenario)
                .into_iter()
                .zip(probabilities)
            {
                table.push(label, vec![count as f64, count as f64 / *draws as f64, p]);
            }
            let _ = writeln!(
                err,
                "draws={} seed={} ({} = no crime)",
                sample.draws, sample.seed, OPT_OUT
            );
            emit(cli, &table, out)
        }
        Command::Verify { file } => {
            let f = load_scenario(file)?;
            verify(cli, &f.scenario, out, err)
        }
    }
}

fn verify(
    cli: &Cli,
    scenario: &Scenario64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let exact = solve_closed_form(scenario)?;
    let oracle: SolveReport64 = solve_numerical(scenario, &OracleConfig::default())?;
    let mut table = ExperimentTable::new(
        "verify",
        vec![
            "closed_form".into(),
            "oracle".into(),
            "relative_difference".into(),
        ],
    );
    let mut worst: f64 = 0.0;
    for key in scenario.keys() {
        let i = scenario.flat_index(key);
        let a = exact.allocation.values()[i];
        let b = oracle.allocation.values()[i];
        let rel = (a - b).abs() / a.abs();
        worst = worst.max(rel);
        table.push(scenario.key_label(key), vec![a, b, rel]);
    }
    let (ba, bb) = (exact.evaluation.surrogate, oracle.evaluation.surrogate);
    table.push("surrogate", vec![ba, bb, (ba - bb).abs() / ba]);
    emit(cli, &table, out)?;
    let _ = writeln!(
        err,
        "oracle iterations={} residual={:e} worst_entry_difference={worst:e}",
        oracle.iterations, oracle.stationarity_residual
    );
    if worst > cli.tolerance {
        return Err(CliError::Numerical(format!(
            "closed form and oracle differ by {worst} (tolerance {})",
            cli.tolerance
        )));
    }
    Ok(())
}
