//! Command-line front end.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::cli_io::{parse_strategy_csv, random_operands, write_strategy_csv, ExperimentConfig, StrategySource};
use crate::conv::LayerSpec;
use crate::exec::{run_and_verify, validate_strategy, ExecError, HardwareSpec, Strategy};
use crate::optimizer::{build_model, evaluate_schedule, solve, OptimizeError, SolveOptions};
use crate::report::{compare, format_table, render_strategy_grid, SweepResult};
use crate::strategy::{compile_with_provenance, GroupSchedule, Heuristic, S1Params};

/// Overrides the solver budget (seconds) from the config file.
pub const BUDGET_ENV: &str = "CONVSTEP_BUDGET";

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_NO_SOLUTION: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "convstep", version, about = "Step-by-step convolution offloading simulator and optimizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured strategy on seeded data and check the result.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Write one JSON line per step.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write a heuristic schedule as strategy CSV.
    Generate {
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        group_size: usize,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for the schedule with the least load traffic.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// `kmin` or a group count.
        #[arg(long, default_value = "kmin")]
        k: String,
        /// Seconds; overrides the config and the environment.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// JSON summary path; defaults to the CSV path with a .json extension.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compare the heuristics over a range of group sizes.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// `group-size=A..B`, both ends included.
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        out: PathBuf,
        /// Also run the optimizer at every group size.
        #[arg(long)]
        optimize: bool,
    },
    /// Validate a strategy CSV and check its numeric result.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<crate::cli_io::ConfigError> for CliError {
    fn from(e: crate::cli_io::ConfigError) -> Self {
        use crate::cli_io::ConfigError::*;
        let code = match e {
            Io { .. } | Parse(_) => EXIT_IO,
            Invalid(_) => EXIT_VALIDATION,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<crate::cli_io::CsvError> for CliError {
    fn from(e: crate::cli_io::CsvError) -> Self {
        CliError::new(EXIT_IO, e.to_string())
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        let code = if matches!(e, ExecError::Mismatch { .. }) { EXIT_MISMATCH } else { EXIT_VALIDATION };
        CliError::new(code, e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        let code = match e {
            OptimizeError::Infeasible | OptimizeError::NoIncumbent => EXIT_NO_SOLUTION,
            _ => EXIT_VALIDATION,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<crate::strategy::StrategyError> for CliError {
    fn from(e: crate::strategy::StrategyError) -> Self {
        CliError::new(EXIT_VALIDATION, e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Runs one command, printing to stdout. Returns the process exit code on failure.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, trace } => simulate(&config, trace.as_deref()),
        Command::Generate { strategy, group_size, config, out } => generate(&config, &strategy, group_size, &out),
        Command::Optimize { config, k, budget, out, summary } => {
            let summary = summary.unwrap_or_else(|| out.with_extension("json"));
            optimize(&config, &k, budget, &out, &summary)
        }
        Command::Compare { config, sweep, out, optimize } => compare_sweep(&config, &sweep, &out, optimize),
        Command::Verify { config, strategy } => verify(&config, &strategy),
    }
}

struct Context {
    config: ExperimentConfig,
    layer: LayerSpec,
    hw: HardwareSpec,
}

impl Context {
    fn load(path: &Path) -> Result<Self, CliError> {
        let config = ExperimentConfig::load(path)?;
        let layer = config.layer()?;
        let hw = config.hardware();
        Ok(Context { config, layer, hw })
    }

    fn solve_options(&self, budget: Option<f64>) -> Result<SolveOptions, CliError> {
        let seconds = match budget {
            Some(b) => b,
            None => match std::env::var(BUDGET_ENV) {
                Ok(v) => v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|b| *b >= 0.0)
                    .ok_or_else(|| CliError::new(EXIT_VALIDATION, format!("{BUDGET_ENV}: bad budget `{v}`")))?,
                Err(_) => self.config.solver_budget,
            },
        };
        if seconds.is_nan() || seconds < 0.0 {
            return Err(CliError::new(EXIT_VALIDATION, format!("bad budget {seconds}")));
        }
        Ok(SolveOptions {
            budget: Some(Duration::from_secs_f64(seconds)),
            polish_after: Duration::from_secs_f64(self.config.polish_after),
            workers: self.config.workers.max(1),
            ..Default::default()
        })
    }
}

/// Best heuristic start that satisfies the model, by objective.
fn best_start(ctx: &Context, params: &S1Params, k: usize) -> Result<Option<(Heuristic, GroupSchedule, u64)>, CliError> {
    let model = build_model(&ctx.layer, &ctx.hw, params, k, ctx.config.nb_data_reload)?;
    let mut best: Option<(Heuristic, GroupSchedule, u64)> = None;
    for h in [Heuristic::RowByRow, Heuristic::ZigZag] {
        let schedule = h.generate(&ctx.layer, params.nb_patches_max)?;
        if let Some(obj) = evaluate_schedule(&model, &schedule) {
            if best.as_ref().is_none_or(|b| obj < b.2) {
                best = Some((h, schedule, obj));
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    objective: u64,
    status: String,
    wall_time_s: f64,
    nodes: u64,
    k: usize,
    k_min: usize,
    nb_patches_max: usize,
    nb_data_reload: usize,
    start_strategy: Option<String>,
    start_objective: Option<u64>,
    gain_vs_start_percent: Option<f64>,
    overlaps: Vec<usize>,
}

fn run_optimizer(
    ctx: &Context,
    params: &S1Params,
    k: usize,
    options: SolveOptions,
) -> Result<(GroupSchedule, OptimizeSummary), CliError> {
    let model = build_model(&ctx.layer, &ctx.hw, params, k, ctx.config.nb_data_reload)?;
    let start = best_start(ctx, params, k)?;
    let options = SolveOptions { mip_start: start.as_ref().map(|s| s.1.clone()), ..options };
    let sol = solve(&model, &options)?;
    let summary = OptimizeSummary {
        objective: sol.objective,
        status: sol.status.to_string(),
        wall_time_s: sol.wall_time.as_secs_f64(),
        nodes: sol.nodes,
        k,
        k_min: params.k_min,
        nb_patches_max: params.nb_patches_max,
        nb_data_reload: ctx.config.nb_data_reload,
        start_strategy: start.as_ref().map(|s| s.0.name().to_string()),
        start_objective: sol.start_objective,
        gain_vs_start_percent: sol.start_objective.map(|s| crate::report::gain_percent(s, sol.objective)),
        overlaps: sol.overlaps,
    };
    Ok((sol.schedule, summary))
}

fn parse_k(k: &str, params: &S1Params) -> Result<usize, CliError> {
    if k.eq_ignore_ascii_case("kmin") {
        return Ok(params.k_min);
    }
    k.parse().map_err(|_| CliError::new(EXIT_VALIDATION, format!("--k expects `kmin` or an integer, got `{k}`")))
}

/// Schedule and compiled strategy for the config's strategy source.
fn configured_strategy(ctx: &Context) -> Result<(GroupSchedule, Strategy), CliError> {
    let (schedule, provenance) = match ctx.config.source()? {
        StrategySource::Generator { heuristic, group_size } => {
            let size = match group_size {
                Some(g) => g,
                None => ctx.config.s1_params()?.nb_patches_max,
            };
            (heuristic.generate(&ctx.layer, size)?, heuristic.name().to_string())
        }
        StrategySource::Csv(path) => (parse_strategy_csv(&read_file(&path)?, &ctx.layer)?, path.display().to_string()),
        StrategySource::Optimize => {
            let params = ctx.config.s1_params()?;
            let k = ctx.config.k.unwrap_or(params.k_min);
            let (schedule, _) = run_optimizer(ctx, &params, k, ctx.solve_options(None)?)?;
            (schedule, "optimized".to_string())
        }
    };
    let strategy = compile_with_provenance(&schedule, &ctx.layer, &ctx.hw, &provenance)?;
    Ok((schedule, strategy))
}

fn simulate(config: &Path, trace: Option<&Path>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let (_, strategy) = configured_strategy(&ctx)?;
    let cost = ctx.config.cost();
    let report = validate_strategy(&strategy, &ctx.layer, &ctx.hw, &cost, ctx.config.nb_data_reload);
    if let Some(path) = trace {
        write_file(path, &report.metrics.to_jsonl())?;
    }
    let m = &report.metrics;
    println!("strategy: {} ({} steps)", strategy.provenance, strategy.steps.len());
    for t in &m.traces {
        println!(
            "step {}: loads {} pixels, writes {} positions, footprint {}, duration {}",
            t.step,
            t.loaded_pixels.len(),
            t.written.iter().map(|e| (e.i, e.j)).collect::<std::collections::BTreeSet<_>>().len(),
            t.footprint,
            t.duration
        );
    }
    println!("flush: writes {} elements, duration {}", m.flush.written.len(), m.flush.duration);
    println!(
        "total duration {}, peak footprint {}, load traffic {}, write traffic {}",
        m.total_duration, m.peak_footprint, m.load_traffic, m.write_traffic
    );
    if let Some(first) = report.violations.first() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        return Err(CliError::new(EXIT_VALIDATION, format!("strategy is invalid: {first}")));
    }
    let (input, kernels) = random_operands(&ctx.layer, ctx.config.seed);
    run_and_verify(&strategy, &input, &kernels, &ctx.layer, &ctx.hw, &cost)?;
    println!("output matches the reference convolution");
    Ok(())
}

fn generate(config: &Path, name: &str, group_size: usize, out: &Path) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let heuristic =
        Heuristic::parse(name).ok_or_else(|| CliError::new(EXIT_VALIDATION, format!("unknown strategy `{name}`")))?;
    let schedule = heuristic.generate(&ctx.layer, group_size)?;
    write_file(out, &write_strategy_csv(&schedule, &ctx.layer))?;
    println!("{}: {} groups written to {}", heuristic, schedule.len(), out.display());
    Ok(())
}

fn optimize(config: &Path, k: &str, budget: Option<f64>, out: &Path, summary_path: &Path) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let params = ctx.config.s1_params()?;
    let k = parse_k(k, &params)?;
    let (schedule, summary) = run_optimizer(&ctx, &params, k, ctx.solve_options(budget)?)?;
    write_file(out, &write_strategy_csv(&schedule, &ctx.layer))?;
    let json = serde_json::to_string_pretty(&summary).expect("plain summary");
    write_file(summary_path, &(json + "\n"))?;
    println!(
        "objective {} ({}), {} groups, {:.2}s",
        summary.objective,
        summary.status,
        schedule.len(),
        summary.wall_time_s
    );
    if let (Some(s), Some(g)) = (summary.start_objective, summary.gain_vs_start_percent) {
        println!("start objective {s}, gain {g:.1}%");
    }
    Ok(())
}

fn parse_sweep(spec: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::new(EXIT_VALIDATION, format!("--sweep expects group-size=A..B, got `{spec}`"));
    let range = spec.strip_prefix("group-size=").ok_or_else(bad)?;
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn compare_sweep(config: &Path, sweep: &str, out: &Path, with_optimizer: bool) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let (from, to) = parse_sweep(sweep)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let cost = ctx.config.cost();
    let mut result = SweepResult::new("group_size");
    for g in from..=to {
        let mut schedules = Vec::new();
        for h in [Heuristic::RowByRow, Heuristic::ZigZag] {
            schedules.push((h.name().to_string(), h.generate(&ctx.layer, g)?));
        }
        if with_optimizer {
            let params = S1Params::with_max(&ctx.layer, g)?;
            match run_optimizer(&ctx, &params, params.k_min, ctx.solve_options(None)?) {
                Ok((schedule, _)) => schedules.push(("optimized".to_string(), schedule)),
                Err(e) => eprintln!("group size {g}: optimizer: {e}"),
            }
        }
        let mut strategies = Vec::new();
        for (name, schedule) in schedules {
            match compile_with_provenance(&schedule, &ctx.layer, &ctx.hw, &name) {
                Ok(s) => {
                    let grid = render_strategy_grid(&schedule, &ctx.layer);
                    write_file(&out.join(format!("grid_{name}_g{g}.svg")), &grid.svg)?;
                    write_file(&out.join(format!("grid_{name}_g{g}.txt")), &grid.ascii)?;
                    strategies.push((name, s));
                }
                Err(e) => eprintln!("group size {g}: {name}: {e}"),
            }
        }
        result.push(g, compare(&strategies, &ctx.layer, &ctx.hw, &cost, ctx.config.nb_data_reload));
    }
    write_file(&out.join("sweep.csv"), &result.to_csv())?;
    for p in &result.points {
        println!("group size {}", p.axis);
        print!("{}", format_table(&p.rows));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ViolationRecord {
    kind: String,
    step: Option<usize>,
    message: String,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    valid: bool,
    violations: Vec<ViolationRecord>,
    numeric_match: Option<bool>,
    numeric_error: Option<String>,
    steps: usize,
    duration: u64,
    peak_footprint: u64,
    load_traffic: u64,
    write_traffic: u64,
}

fn verify(config: &Path, strategy_csv: &Path) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let schedule = parse_strategy_csv(&read_file(strategy_csv)?, &ctx.layer)?;
    let strategy = compile_with_provenance(&schedule, &ctx.layer, &ctx.hw, &strategy_csv.display().to_string())?;
    let cost = ctx.config.cost();
    let report = validate_strategy(&strategy, &ctx.layer, &ctx.hw, &cost, ctx.config.nb_data_reload);
    let (input, kernels) = random_operands(&ctx.layer, ctx.config.seed);
    let numeric = run_and_verify(&strategy, &input, &kernels, &ctx.layer, &ctx.hw, &cost);
    let (numeric_match, numeric_error) = match &numeric {
        Ok(_) => (Some(true), None),
        Err(e @ ExecError::Mismatch { .. }) => (Some(false), Some(e.to_string())),
        Err(e) => (None, Some(e.to_string())),
    };
    let m = &report.metrics;
    let out = VerifyReport {
        valid: report.is_valid(),
        violations: report
            .violations
            .iter()
            .map(|v| ViolationRecord { kind: format!("{:?}", v.kind()), step: v.step(), message: v.to_string() })
            .collect(),
        numeric_match,
        numeric_error,
        steps: strategy.steps.len(),
        duration: m.total_duration,
        peak_footprint: m.peak_footprint,
        load_traffic: m.load_traffic,
        write_traffic: m.write_traffic,
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("plain report"));
    if !out.valid {
        return Err(CliError::new(EXIT_VALIDATION, format!("{} violations", out.violations.len())));
    }
    if out.numeric_match == Some(false) {
        return Err(CliError::new(EXIT_MISMATCH, out.numeric_error.unwrap_or_default()));
    }
    numeric.map(|_| ()).map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_syntax() {
        assert_eq!(parse_sweep("group-size=1..4").unwrap(), (1, 4));
        assert_eq!(parse_sweep("group-size=2..=3").unwrap(), (2, 3));
        assert!(parse_sweep("group-size=4..1").is_err());
        assert!(parse_sweep("size=1..4").is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from(["convstep", "optimize", "--config", "c.toml", "--out", "o.csv"]).unwrap();
        assert!(matches!(cli.command, Command::Optimize { ref k, .. } if k == "kmin"));
    }
}
