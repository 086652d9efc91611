use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use point_saga::analysis::{
    empirical_contraction, iterations_to_relative, reference_solution, theoretical_rate, REFERENCE_TOL,
};
use point_saga::problems::{generate, load_libsvm, Family, GeneratorSpec};
use point_saga::solver::{GradientInit, RunOutput, Solver, StepSize};
use point_saga::verify::{run_all, Scale};
use point_saga::{FiniteSumProblem, Point, SolverConfig, DEFAULT_PROX_TOL};
use rayon::prelude::*;

use crate::output::{sweep_csv, write_trace, RunSummary, SweepRow};
use crate::{CliError, EXIT_VERIFY_FAILED};

/// Lyapunov steps skipped before measuring the empirical contraction.
pub const BURN_IN: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "point-saga", version, about = "Minibatch Point-SAGA solver and verification harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem, writing a trace per repeat and a summary.
    Run(RunArgs),
    /// Grid over step size and batch size.
    Sweep(SweepArgs),
    /// Numerical invariant suites.
    Verify(VerifyArgs),
    /// Print the theoretical rates for a parameter set.
    Rates(RatesArgs),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemKind {
    Quad,
    Ridge,
    Logistic,
    File(PathBuf),
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quad" => Ok(Self::Quad),
            "ridge" => Ok(Self::Ridge),
            "logistic" => Ok(Self::Logistic),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(format!("unknown problem '{s}', expected quad|ridge|logistic|file:<path>")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaArg {
    Auto,
    Value(f64),
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse::<f64>().map(Self::Value).map_err(|_| format!("invalid step size '{s}', expected a number or 'auto'"))
    }
}

impl From<GammaArg> for StepSize {
    fn from(g: GammaArg) -> Self {
        match g {
            GammaArg::Auto => StepSize::Auto,
            GammaArg::Value(v) => StepSize::Fixed(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    AtX0,
    Zeros,
}

#[derive(Clone, Debug, Args)]
pub struct ProblemArgs {
    /// quad | ridge | logistic | file:<libsvm path>
    #[arg(long, default_value = "quad")]
    pub problem: ProblemKind,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    /// Smoothness constant (ignored for file problems, which derive it from the data).
    #[arg(long = "L", default_value_t = 1.0)]
    pub l: f64,
    /// Generator seed; defaults to --seed.
    #[arg(long)]
    pub problem_seed: Option<u64>,
}

#[derive(Clone, Debug, Args)]
pub struct SolveArgs {
    #[arg(long, default_value_t = 1)]
    pub s: usize,
    /// Step size, or `auto` for sqrt(s / (L mu n)).
    #[arg(long, default_value = "auto")]
    pub gamma: GammaArg,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub trace_every: usize,
    /// Recompute the gradient-table mean every k iterations; 0 disables.
    #[arg(long, default_value_t = 1000)]
    pub refresh_every: usize,
    #[arg(long)]
    pub stop_dist_sq: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PROX_TOL)]
    pub prox_tol: f64,
    #[arg(long, value_enum, default_value = "at-x0")]
    pub init: InitArg,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Write 0 in the wall_ns column so traces are byte-reproducible.
    #[arg(long)]
    pub zero_wall_time: bool,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Comma-separated step sizes (`auto` allowed); defaults to --gamma.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<GammaArg>,
    /// Comma-separated batch sizes; defaults to --s.
    #[arg(long, value_delimiter = ',')]
    pub s_values: Vec<usize>,
    /// Relative Lyapunov level used for iterations_to_threshold.
    #[arg(long, default_value_t = 1e-8)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Quick,
    Full,
}

#[derive(Clone, Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "quick")]
    pub scale: ScaleArg,
}

#[derive(Clone, Debug, Args)]
pub struct RatesArgs {
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub s: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub mu: f64,
    #[arg(long = "L")]
    pub l: f64,
}

/// Runs a subcommand and returns the process exit code on success.
pub fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run(a) => cmd_run(&a).map(|s| {
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
            0
        }),
        Command::Sweep(a) => cmd_sweep(&a).map(|rows| {
            print!("{}", sweep_csv(&rows));
            0
        }),
        Command::Verify(a) => Ok(cmd_verify(&a)),
        Command::Rates(a) => {
            let json = cmd_rates(&a)?;
            println!("{json}");
            Ok(0)
        }
    }
}

pub fn build_problem(args: &ProblemArgs, default_seed: u64) -> Result<FiniteSumProblem, CliError> {
    let family = match &args.problem {
        ProblemKind::Quad => Family::Quadratic,
        ProblemKind::Ridge => Family::RidgeRegression,
        ProblemKind::Logistic => Family::LogisticRidge,
        ProblemKind::File(path) => {
            let (_, problem) = load_libsvm(path, args.mu)?;
            let reference = reference_solution(&problem, REFERENCE_TOL)?;
            return Ok(problem.with_known_solution(reference.x_star)?);
        }
    };
    let spec = GeneratorSpec {
        family,
        n: args.n,
        dim: args.dim,
        mu: args.mu,
        l: args.l,
        seed: args.problem_seed.unwrap_or(default_seed),
    };
    Ok(generate(&spec)?)
}

fn solver_config(args: &SolveArgs, gamma: GammaArg, s: usize) -> SolverConfig {
    SolverConfig {
        gamma: gamma.into(),
        batch_size: s,
        max_iters: args.iters,
        seed: args.seed,
        stop_dist_sq: args.stop_dist_sq,
        trace_every: args.trace_every,
        refresh_every: (args.refresh_every > 0).then_some(args.refresh_every),
        init_gradients: match args.init {
            InitArg::AtX0 => GradientInit::AtX0,
            InitArg::Zeros => GradientInit::Zeros,
        },
        prox_tol: args.prox_tol,
    }
}

/// Runs `repeats` seeds in parallel; results are in seed order.
pub fn run_repeats(
    problem: &FiniteSumProblem,
    config: &SolverConfig,
    repeats: usize,
) -> Result<Vec<RunOutput>, CliError> {
    if repeats == 0 {
        return Err(CliError::config("repeats must be at least 1"));
    }
    // Validate once before fanning out.
    Solver::new(problem, config.clone())?;
    let x0 = Point::zeros(problem.dim());
    let outputs: point_saga::Result<Vec<RunOutput>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(r as u64);
            Solver::new(problem, cfg)?.run(&x0, None)
        })
        .collect();
    Ok(outputs?)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v?;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

pub fn trace_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("trace_seed{seed}.csv"))
}

pub fn cmd_run(args: &RunArgs) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let problem = build_problem(&args.problem, args.solve.seed)?;
    let config = solver_config(&args.solve, args.solve.gamma, args.solve.s);
    let gamma = config.resolve_gamma(&problem)?;
    let rates = theoretical_rate(gamma, config.batch_size, problem.n(), problem.mu(), problem.L())?;
    let outputs = run_repeats(&problem, &config, args.solve.repeats)?;

    fs::create_dir_all(&args.solve.out)
        .map_err(|e| CliError::io(format!("Io: cannot create {}: {e}", args.solve.out.display())))?;
    for (r, output) in outputs.iter().enumerate() {
        let path = trace_path(&args.solve.out, config.seed.wrapping_add(r as u64));
        write_trace(&path, &output.trace, args.solve.zero_wall_time)
            .map_err(|e| CliError::io(format!("Io: cannot write {}: {e}", path.display())))?;
    }

    let mut summary = RunSummary::new(&rates);
    summary.empirical_contraction = mean(outputs.iter().map(|o| empirical_contraction(&o.lyapunov_history, BURN_IN)));
    summary.final_dist_sq = mean(outputs.iter().map(|o| o.trace.last().and_then(|r| r.dist_sq)));
    let calls: usize = outputs.iter().map(|o| config.batch_size * o.iterations()).sum();
    summary.prox_calls = (calls as f64 / outputs.len() as f64).round() as u64;
    summary.wall_ns = start.elapsed().as_nanos() as u64;

    let path = args.solve.out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(format!("Io: cannot write {}: {e}", path.display())))?;
    Ok(summary)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    if args.gammas.is_empty() && args.s_values.is_empty() {
        return Err(CliError::config("sweep needs --gammas or --s-values"));
    }
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(CliError::config(format!("threshold must lie in (0, 1), got {}", args.threshold)));
    }
    let problem = build_problem(&args.problem, args.solve.seed)?;
    let s_axis = if args.s_values.is_empty() { vec![args.solve.s] } else { args.s_values.clone() };
    let gamma_axis = if args.gammas.is_empty() { vec![args.solve.gamma] } else { args.gammas.clone() };

    let mut rows = Vec::with_capacity(s_axis.len() * gamma_axis.len());
    for &s in &s_axis {
        for &g in &gamma_axis {
            let start = Instant::now();
            let config = solver_config(&args.solve, g, s);
            let gamma = config.resolve_gamma(&problem)?;
            let rates = theoretical_rate(gamma, s, problem.n(), problem.mu(), problem.L())?;
            let outputs = run_repeats(&problem, &config, args.solve.repeats)?;
            let iters = mean(
                outputs.iter().map(|o| iterations_to_relative(&o.lyapunov_history, args.threshold).map(|t| t as f64)),
            );
            rows.push(SweepRow {
                gamma,
                s,
                rho: rates.rho,
                empirical_contraction: mean(
                    outputs.iter().map(|o| empirical_contraction(&o.lyapunov_history, BURN_IN)),
                ),
                iterations_to_threshold: iters,
                prox_calls: iters.map(|t| t * s as f64),
                predicted_iterations: -args.threshold.ln() / (1.0 - rates.rho),
                wall_ns: start.elapsed().as_nanos() as u64,
            });
        }
    }

    fs::create_dir_all(&args.solve.out)
        .map_err(|e| CliError::io(format!("Io: cannot create {}: {e}", args.solve.out.display())))?;
    let path = args.solve.out.join("sweep.csv");
    fs::write(&path, sweep_csv(&rows))
        .map_err(|e| CliError::io(format!("Io: cannot write {}: {e}", path.display())))?;
    Ok(rows)
}

/// Prints one line per suite; returns 0 when all pass.
pub fn cmd_verify(args: &VerifyArgs) -> u8 {
    let scale = match args.scale {
        ScaleArg::Quick => Scale::Quick,
        ScaleArg::Full => Scale::Full,
    };
    let outcomes = run_all(scale);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    if outcomes.iter().all(|o| o.passed) {
        0
    } else {
        EXIT_VERIFY_FAILED
    }
}

pub fn cmd_rates(args: &RatesArgs) -> Result<String, CliError> {
    let report = theoretical_rate(args.gamma, args.s, args.n, args.mu, args.l)?;
    Ok(serde_json::to_string_pretty(&report).expect("rate report serializes"))
}
