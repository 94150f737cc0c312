//! Command-line front end: argument parsing, command dispatch and reports.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use resetlp_core::backtest::{compare, replay, BandRow};
use resetlp_core::bins::BinGrid;
use resetlp_core::distribution::{
    fit_distribution, percent_changes, NextPriceDistribution, DEFAULT_BIN_WIDTH_PCT, DEFAULT_K_MAX,
};
use resetlp_core::optimizer::{projected_gradient_verify, solve, OptimizationProblem};
use resetlp_core::simulate::{run_trace, sample_path, summarize_outcomes, SimReport, StepOutcome};
use resetlp_core::strategies::{window_for_mass, StrategyKind, StrategySpec};
use resetlp_core::utility::{EvalMode, LandingProfile, UtilityParams};
use serde::Serialize;

use crate::io::{
    create_csv, emit, read_distribution, read_prices_file, read_strategy, to_json, write_prices,
    DistributionDoc, ParamOverrides, StrategyDoc,
};
use crate::sweep::{
    parse_f64_list, parse_usize_grid, sweep, write_sweep_csv, SweepConfig, SweepStrategy, TauAxis,
};
use crate::synth::{price_series, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "resetlp",
    version,
    about = "Tau-reset liquidity provision: fit, evaluate, optimize, simulate, backtest"
)]
pub struct Cli {
    /// Write the main artifact here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = "strict-paper")]
    pub mode: EvalMode,
    /// Suppress notes on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the next-price distribution of a price CSV.
    Fit(FitArgs),
    /// Expected utility of a strategy.
    Eval(EvalArgs),
    /// Optimal allocation for a reset window.
    Optimize(OptimizeArgs),
    /// Expected-utility grid as CSV.
    Sweep(SweepArgs),
    /// Monte Carlo run of a strategy on sampled moves.
    Simulate(SimulateArgs),
    /// Replay a strategy on a price CSV.
    Backtest(BacktestArgs),
    /// Write a synthetic heavy-tailed price CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub ell: Option<f64>,
}

impl ParamArgs {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            a: self.a,
            kappa: self.kappa,
            ell: self.ell,
        }
    }

    fn params(&self) -> Result<UtilityParams> {
        self.overrides().resolve(&StrategyDoc::default())
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub prices: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_PCT)]
    pub bin_width_pct: f64,
    /// Fold changes beyond the outer bins into them instead of dropping them.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub clamp_tails: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub distribution: PathBuf,
    pub strategy: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub distribution: PathBuf,
    #[arg(long, conflicts_with = "n_tau", required_unless_present = "n_tau")]
    pub tau_mass: Option<f64>,
    #[arg(long)]
    pub n_tau: Option<usize>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Cross-check with projected gradient ascent (a >= 0 only).
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub distribution: PathBuf,
    #[arg(long, value_enum, default_value = "proportional")]
    pub strategy: SweepStrategy,
    /// Reset half-widths: `a,b,c` or `lo:hi[:step]`.
    #[arg(
        long,
        conflicts_with = "tau_mass_grid",
        required_unless_present = "tau_mass_grid"
    )]
    pub n_tau_grid: Option<String>,
    /// Reset windows by probability mass, comma separated.
    #[arg(long)]
    pub tau_mass_grid: Option<String>,
    /// Allocation half-widths; omit for the best proportional window.
    #[arg(long)]
    pub n_alpha_grid: Option<String>,
    /// Risk aversion values, comma separated.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub a: String,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub ell: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub distribution: PathBuf,
    pub strategy: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub steps: usize,
    /// Per-step CSV of (step, offset, reward, reset).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    pub prices: PathBuf,
    pub strategy: PathBuf,
    /// Distribution for constructor strategies and the grid step; fitted
    /// from the prices when omitted.
    #[arg(long)]
    pub distribution: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_PCT)]
    pub bin_width_pct: f64,
    /// Price at the lower edge of bin 0; defaults to the first price.
    #[arg(long)]
    pub grid_anchor: Option<f64>,
    /// Widen the covering grid to this many bins.
    #[arg(long)]
    pub grid_bins: Option<usize>,
    /// Compare against uniform liquidity over every grid bin.
    #[arg(long)]
    pub compare_v2: bool,
    /// Band CSV of (step, price, alpha_low, alpha_high, tau_low, tau_high).
    #[arg(long)]
    pub band: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = SynthConfig::default().start_price)]
    pub start_price: f64,
    #[arg(long, default_value_t = SynthConfig::default().df)]
    pub df: f64,
    #[arg(long, default_value_t = SynthConfig::default().scale_pct)]
    pub scale_pct: f64,
    #[arg(long, default_value_t = SynthConfig::default().spacing_secs)]
    pub spacing_secs: i64,
}

#[derive(Debug, Serialize)]
struct StrategySummary {
    kind: StrategyKind,
    n_tau: usize,
    n_alpha: usize,
}

impl From<&StrategySpec> for StrategySummary {
    fn from(s: &StrategySpec) -> Self {
        Self {
            kind: s.kind,
            n_tau: s.n_tau,
            n_alpha: s.n_alpha,
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalReport {
    command: &'static str,
    mode: EvalMode,
    params: UtilityParams,
    strategy: StrategySummary,
    expected_utility: f64,
    reset_rate: f64,
    landing_mass_in_alpha: f64,
}

#[derive(Debug, Serialize)]
struct Verification {
    method: &'static str,
    objective: f64,
    objective_gap: f64,
    kkt_residual: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct OptimizeReport {
    command: &'static str,
    mode: EvalMode,
    params: UtilityParams,
    tol: f64,
    tau_mass: Option<f64>,
    n_tau: usize,
    n_alpha: usize,
    method: &'static str,
    weights: Vec<f64>,
    objective: f64,
    kkt_residual: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<Verification>,
    /// Ready to pass to `eval`, `simulate` or `backtest`.
    strategy: StrategyDoc,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    command: &'static str,
    mode: EvalMode,
    params: UtilityParams,
    strategy: StrategySummary,
    #[serde(flatten)]
    sim: SimReport,
    analytic_expected_utility: f64,
}

#[derive(Debug, Serialize)]
struct GridSummary {
    reference_price: f64,
    step: f64,
    lowest: i64,
    highest: i64,
    bins: usize,
}

#[derive(Debug, Serialize)]
struct V2Summary {
    /// Fee-only uniform liquidity over every grid bin; impermanent loss and
    /// pool-share dilution are ignored.
    basis: &'static str,
    mean_utility_per_step: f64,
    ratio: f64,
    shifted_mean_utility_per_step: f64,
    shifted_ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BacktestSummary {
    command: &'static str,
    mode: EvalMode,
    params: UtilityParams,
    strategy: StrategySummary,
    grid: GridSummary,
    steps: usize,
    resets: usize,
    total_reward: f64,
    mean_utility_per_step: f64,
    std_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v2: Option<V2Summary>,
}

/// Parses and runs one invocation.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            e.print()?;
            return Ok(());
        }
        Err(e) => return Err(UsageError(e.to_string()).into()),
    };
    execute(&cli)
}

/// Command-line misuse, reported in place of clap's multi-line message.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<&str> = self
            .0
            .lines()
            .take_while(|l| !l.trim().is_empty())
            .map(str::trim)
            .collect();
        let joined = head.join(" ");
        f.write_str(joined.strip_prefix("error: ").unwrap_or(&joined))
    }
}

impl std::error::Error for UsageError {}

/// Stable tag for the first recognizable cause in the chain.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<resetlp_core::Error>() {
            return e.kind();
        }
        if cause.is::<UsageError>() {
            return "usage";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
        if cause.is::<csv::Error>() {
            return "csv";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "invalid-input"
}

/// `error: <kind>: <message>` on a single line.
pub fn error_line(err: &anyhow::Error) -> String {
    let msg = format!("{err:#}").replace('\n', " ");
    format!("error: {}: {}", error_kind(err), msg)
}

fn note(cli: &Cli, msg: &str) {
    if !cli.quiet {
        eprintln!("{msg}");
    }
}

fn finish(cli: &Cli, contents: &str) -> Result<()> {
    emit(cli.out.as_deref(), contents)?;
    if let Some(p) = &cli.out {
        note(cli, &format!("wrote {}", p.display()));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Optimize(a) => cmd_optimize(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Backtest(a) => cmd_backtest(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn load_strategy(
    path: &Path,
    dist: Option<&NextPriceDistribution>,
    params: &ParamArgs,
    mode: EvalMode,
) -> Result<StrategySpec> {
    read_strategy(path)?
        .resolve(dist, params.overrides(), mode)
        .with_context(|| format!("resolving strategy {}", path.display()))
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let series = read_prices_file(&args.prices)?;
    let dist = fit_distribution(
        &percent_changes(&series),
        args.k_max,
        args.bin_width_pct,
        args.clamp_tails,
    )?;
    finish(
        cli,
        &to_json(&DistributionDoc::new(&dist, Some(series.len())))?,
    )
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let dist = read_distribution(&args.distribution)?;
    let spec = load_strategy(&args.strategy, Some(&dist), &args.params, cli.mode)?;
    let profile = LandingProfile::new(&dist, spec.n_tau)?;
    let report = EvalReport {
        command: "eval",
        mode: cli.mode,
        params: spec.params,
        strategy: (&spec).into(),
        expected_utility: profile.expected_utility(&spec.allocation, &spec.params, cli.mode)?,
        reset_rate: profile.chain().reset_rate(&dist),
        landing_mass_in_alpha: profile.landing(spec.n_alpha).iter().sum(),
    };
    finish(cli, &to_json(&report)?)
}

fn cmd_optimize(cli: &Cli, args: &OptimizeArgs) -> Result<()> {
    let dist = read_distribution(&args.distribution)?;
    let params = args.params.params()?;
    let n_tau = match (args.n_tau, args.tau_mass) {
        (Some(n), _) => n,
        (None, Some(m)) => window_for_mass(&dist, m)?,
        (None, None) => bail!("give --n-tau or --tau-mass"),
    };
    let profile = LandingProfile::new(&dist, n_tau)?;
    let problem = OptimizationProblem::from_profile(&profile, profile.reach(), params, cli.mode)?;
    let sol = solve(&problem, args.tol)?;
    let verification = if args.verify {
        let pg = projected_gradient_verify(&problem, args.tol, 100_000)?;
        Some(Verification {
            method: pg.method.as_str(),
            objective: pg.objective,
            objective_gap: (pg.objective - sol.objective).abs(),
            kkt_residual: pg.kkt_residual,
            iterations: pg.iterations,
            converged: pg.converged,
        })
    } else {
        None
    };
    let spec = StrategySpec::new(StrategyKind::Optimal, n_tau, sol.allocation.clone(), params)?;
    let report = OptimizeReport {
        command: "optimize",
        mode: cli.mode,
        params,
        tol: args.tol,
        tau_mass: args.n_tau.is_none().then_some(args.tau_mass).flatten(),
        n_tau,
        n_alpha: sol.allocation.n_alpha(),
        method: sol.method.as_str(),
        weights: sol.allocation.weights().to_vec(),
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        converged: sol.converged,
        verification,
        strategy: StrategyDoc::explicit(&spec),
    };
    finish(cli, &to_json(&report)?)
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let dist = read_distribution(&args.distribution)?;
    let tau = match (&args.n_tau_grid, &args.tau_mass_grid) {
        (Some(g), _) => TauAxis::Counts(parse_usize_grid(g)?),
        (None, Some(g)) => TauAxis::Masses(parse_f64_list(g)?),
        (None, None) => bail!("give --n-tau-grid or --tau-mass-grid"),
    };
    let base = ParamArgs {
        a: None,
        kappa: args.kappa,
        ell: args.ell,
    };
    let cfg = SweepConfig {
        strategy: args.strategy,
        a_values: parse_f64_list(&args.a)?,
        tau,
        n_alpha: match &args.n_alpha_grid {
            Some(g) => parse_usize_grid(g)?,
            None => Vec::new(),
        },
        params: base.params()?,
        mode: cli.mode,
    };
    let rows = sweep(&dist, &cfg)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows)?;
    finish(cli, &String::from_utf8(buf)?)
}

fn write_trace(path: &Path, outcomes: &[StepOutcome]) -> Result<()> {
    let mut w = create_csv(path)?;
    w.write_record(["step", "offset", "reward", "reset"])?;
    for (t, o) in outcomes.iter().enumerate() {
        w.write_record([
            (t + 1).to_string(),
            o.landing.to_string(),
            o.reward.to_string(),
            o.reset.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let dist = read_distribution(&args.distribution)?;
    let spec = load_strategy(&args.strategy, Some(&dist), &args.params, cli.mode)?;
    let path = sample_path(&dist, args.steps, cli.seed);
    let outcomes = run_trace(&path, &spec, cli.mode)?;
    if let Some(p) = &args.trace {
        write_trace(p, &outcomes)?;
        note(cli, &format!("wrote {}", p.display()));
    }
    let report = SimulateReport {
        command: "simulate",
        mode: cli.mode,
        params: spec.params,
        strategy: (&spec).into(),
        sim: summarize_outcomes(&outcomes, Some(cli.seed)),
        analytic_expected_utility: spec.expected_utility(&dist, cli.mode)?,
    };
    finish(cli, &to_json(&report)?)
}

fn write_band(path: &Path, rows: &[BandRow]) -> Result<()> {
    let mut w = create_csv(path)?;
    w.write_record([
        "step",
        "price",
        "alpha_low",
        "alpha_high",
        "tau_low",
        "tau_high",
    ])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.price.to_string(),
            r.alpha_low.to_string(),
            r.alpha_high.to_string(),
            r.tau_low.to_string(),
            r.tau_high.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_backtest(cli: &Cli, args: &BacktestArgs) -> Result<()> {
    let series = read_prices_file(&args.prices)?;
    let dist = match &args.distribution {
        Some(p) => read_distribution(p)?,
        None => fit_distribution(
            &percent_changes(&series),
            args.k_max,
            args.bin_width_pct,
            true,
        )?,
    };
    let spec = load_strategy(&args.strategy, Some(&dist), &args.params, cli.mode)?;
    let (lo, hi) = series.min_max();
    let anchor = args.grid_anchor.unwrap_or(series.prices()[0]);
    let mut grid = BinGrid::covering(anchor, dist.grid_step(), lo, hi)?;
    if let Some(n) = args.grid_bins {
        grid = grid.widened_to(n)?;
    }
    let report = replay(&series, &spec, &grid, cli.mode)?;
    if let Some(p) = &args.band {
        write_band(p, &report.band_trace)?;
        note(cli, &format!("wrote {}", p.display()));
    }
    let v2 = if args.compare_v2 {
        Some(V2Summary {
            basis: "uniform over all grid bins, fees only",
            mean_utility_per_step: report.v2_mean_utility_per_step,
            ratio: compare(&report)?,
            shifted_mean_utility_per_step: report.v2_shifted_utility_per_step,
            shifted_ratio: report.shifted_ratio,
        })
    } else {
        None
    };
    let (lowest, highest) = grid.index_range();
    let summary = BacktestSummary {
        command: "backtest",
        mode: cli.mode,
        params: spec.params,
        strategy: (&spec).into(),
        grid: GridSummary {
            reference_price: grid.reference_price(),
            step: grid.step(),
            lowest,
            highest,
            bins: grid.bin_count(),
        },
        steps: report.steps,
        resets: report.resets,
        total_reward: report.total_reward,
        mean_utility_per_step: report.mean_utility_per_step,
        std_error: report.std_error,
        v2,
    };
    finish(cli, &to_json(&summary)?)
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        steps: args.steps,
        seed: cli.seed,
        start_price: args.start_price,
        df: args.df,
        scale_pct: args.scale_pct,
        spacing_secs: args.spacing_secs,
        ..SynthConfig::default()
    };
    let series = price_series(&cfg)?;
    let mut buf = Vec::new();
    write_prices(&mut buf, &series)?;
    finish(cli, &String::from_utf8(buf)?)
}
