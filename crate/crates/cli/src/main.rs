//! `quorum`: closed-form curves, optimization, simulation and response
//! analysis for networked LLM quorums.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 infeasible model,
//! 4 statistical mismatch under `simulate --assert-match`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use quorum_core::analysis::{
    bounds_curve, containment_violations, permutation_average_curve, synthetic_matrix,
    write_bounds_csv, write_curve_csv, AnalysisError, ResponseMatrix,
};
use quorum_core::ensemble::{joint_accuracy_exact, joint_accuracy_gaussian, map_threshold};
use quorum_core::optimizer::{optimize, Method, OptimizeRequest};
use quorum_core::simulator::{
    compare_with_theory, run_simulation, run_simulation_traced, write_trace_csv, SimConfig,
    StopRule,
};
use quorum_core::{ConfigFile, ModelError, SystemSpec, TOOL_VERSION};

/// Theta used by `--fig5` when neither `--theta` nor a config sets one.
const FIG5_DEFAULT_THETA: f64 = 0.1;
const DEFAULT_M_RANGE: [u32; 2] = [1, 50];

#[derive(Parser)]
#[command(
    name = "quorum",
    version,
    about = "Accuracy/timeliness planning for networked LLM quorums"
)]
struct Cli {
    /// JSON configuration: {"theta", "users": [{lambda, w, p, t, mu}], "m_range"?, "seed"?}
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Use the built-in ten-cluster family (lambda = 1, w = 0.5, p = 0.7 + i/90,
    /// t = 1 + i/9, mu = 2 + 2i/9 for i = 0..9) instead of --config.
    #[arg(long, global = true, conflicts_with = "config")]
    fig5: bool,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-user aggregated accuracy for every m in range
    /// (CSV: m,user,p_joint_exact,p_joint_gaussian,k_star).
    Accuracy(RangeArgs),
    /// Minimize the accuracy/timeliness objective over m.
    Optimize(OptimizeArgs),
    /// Run the discrete-event simulation and compare with closed forms.
    Simulate(SimulateArgs),
    /// Ensemble curves from a recorded response matrix.
    Analyze(AnalyzeArgs),
    /// Generate an independent synthetic response matrix (CSV).
    Synth(SynthArgs),
    /// Print the resolved configuration as JSON.
    Config(ThetaArg),
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long)]
    m_min: Option<u32>,
    #[arg(long)]
    m_max: Option<u32>,
}

#[derive(Args)]
struct ThetaArg {
    /// Overrides the config theta.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Grid,
    Relaxed,
    Both,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Grid => Method::Grid,
            MethodArg::Relaxed => Method::Relaxed,
            MethodArg::Both => Method::Both,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    theta: ThetaArg,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    /// Objective curve CSV (m,objective_exact,objective_relaxed); defaults to
    /// `<out>.curve.csv` when --out is given.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    m: u32,
    /// Stop after this many correct deliveries in total (default 100000).
    #[arg(long, group = "stop")]
    deliveries: Option<u64>,
    /// Stop once every user has this many inter-delivery samples.
    #[arg(long, group = "stop")]
    per_user: Option<u64>,
    /// Stop at this simulated time.
    #[arg(long, group = "stop", allow_hyphen_values = true)]
    horizon: Option<f64>,
    /// Correct deliveries discarded before measuring.
    #[arg(long, default_value_t = 0)]
    warmup: u64,
    /// Per-delivery CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Exit with code 4 if any |z| exceeds --z-limit.
    #[arg(long)]
    assert_match: bool,
    #[arg(long, default_value_t = 4.0)]
    z_limit: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// CSV with header query_id,true_label,<model_1>,...
    #[arg(long)]
    matrix: PathBuf,
    /// Prior probability of a +1 truth used by the MAP vote.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    prior: f64,
    /// Also write closed-form lower/upper/mean-p curves.
    #[arg(long)]
    bounds: bool,
    /// Bounds CSV; defaults to `<out>.bounds.csv` when --out is given.
    #[arg(long)]
    bounds_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated per-model accuracies.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<f64>,
    #[arg(long)]
    rows: usize,
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self {
            code: if e.is_infeasible() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(inner) => inner.into(),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Every JSON document carries the tool version and the resolved config.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool_version: &'static str,
    command: &'static str,
    config: &'a ConfigFile,
    #[serde(flatten)]
    body: T,
}

fn load_config(cli: &Cli, theta: Option<f64>) -> CliResult<ConfigFile> {
    let mut config = if cli.fig5 {
        let mut c = ConfigFile::from_system(&SystemSpec::reference_family(FIG5_DEFAULT_THETA));
        c.m_range = Some(DEFAULT_M_RANGE);
        c
    } else if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        ConfigFile::from_json(&text)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?
    } else {
        return Err(Failure::input(
            "no configuration: pass --config <PATH> or --fig5",
        ));
    };
    if let Some(theta) = theta {
        config.theta = theta;
    }
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if !(config.theta.is_finite() && config.theta >= 0.0) {
        return Err(Failure::input(format!(
            "theta must be a finite number >= 0, got {}",
            config.theta
        )));
    }
    config.validate().map_err(Failure::input)?;
    Ok(config)
}

fn resolve_range(config: &ConfigFile, args: &RangeArgs) -> CliResult<(u32, u32)> {
    let [lo, hi] = config.m_range.unwrap_or(DEFAULT_M_RANGE);
    let (lo, hi) = (args.m_min.unwrap_or(lo), args.m_max.unwrap_or(hi));
    if lo == 0 || lo > hi {
        return Err(Failure::input(format!(
            "m range must satisfy 1 <= m_min <= m_max, got [{lo}, {hi}]"
        )));
    }
    Ok((lo, hi))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn output(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> CliResult<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_accuracy(cli: &Cli, args: &RangeArgs) -> CliResult<()> {
    let config = load_config(cli, None)?;
    let (lo, hi) = resolve_range(&config, args)?;
    let mut w = csv::Writer::from_writer(output(&cli.out)?);
    w.write_record(["m", "user", "p_joint_exact", "p_joint_gaussian", "k_star"])?;
    for m in lo..=hi {
        for (i, u) in config.users.iter().enumerate() {
            let exact = joint_accuracy_exact(m, u.p, u.w)?;
            let gaussian = joint_accuracy_gaussian(m as f64, u.p, u.w).ok();
            let k_star = map_threshold(m, u.p, u.w).ok();
            w.write_record([
                m.to_string(),
                i.to_string(),
                exact.to_string(),
                opt(gaussian),
                opt(k_star),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_optimize(cli: &Cli, args: &OptimizeArgs) -> CliResult<()> {
    let config = load_config(cli, args.theta.theta)?;
    let (lo, hi) = resolve_range(&config, &args.range)?;
    let mut request = OptimizeRequest::new(config.system())
        .with_range(lo, hi)
        .with_method(args.method.into());
    request.seed = config.seed.unwrap_or(0);
    let report = optimize(&request)?;

    let relaxed_grid = report.relaxed_grid_argmin();
    let mut summary: Box<dyn Write> = if cli.out.is_some() {
        Box::new(io::stdout())
    } else {
        Box::new(io::stderr())
    };
    if let Some(m) = report.best_m_exact {
        writeln!(summary, "exact m* = {m}")?;
    }
    if let Some(m) = report.best_m_relaxed_rounded {
        let real = report.best_m_relaxed_real.unwrap_or(f64::NAN);
        writeln!(summary, "relaxed m* = {m} (continuous optimum {real:.4})")?;
    }
    if let Some((m, _)) = relaxed_grid {
        writeln!(summary, "relaxed integer argmin = {m}")?;
    }
    if report.disagreement == Some(true) {
        writeln!(
            summary,
            "warning: exact and relaxed optima differ by more than 2"
        )?;
    }

    #[derive(Serialize)]
    struct Body<'a> {
        request: &'a OptimizeRequest,
        relaxed_integer_argmin: Option<u32>,
        report: &'a quorum_core::optimizer::OptimizeReport,
    }
    let body = Body {
        request: &request,
        relaxed_integer_argmin: relaxed_grid.map(|b| b.0),
        report: &report,
    };
    write_json(
        &cli.out,
        &Envelope {
            tool_version: TOOL_VERSION,
            command: "optimize",
            config: &config,
            body,
        },
    )?;

    let curve_path = args
        .curve_out
        .clone()
        .or_else(|| cli.out.as_deref().map(|p| sibling(p, ".curve.csv")));
    if let Some(path) = curve_path {
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["m", "objective_exact", "objective_relaxed"])?;
        for c in &report.objective_curve {
            w.write_record([
                c.m.to_string(),
                opt(c.objective_exact),
                opt(c.objective_relaxed),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> CliResult<()> {
    let config = load_config(cli, None)?;
    let stop_rule = match (args.deliveries, args.per_user, args.horizon) {
        (_, Some(n), _) => StopRule::CorrectPerUser(n),
        (_, _, Some(h)) => StopRule::Horizon(h),
        (n, _, _) => StopRule::TotalCorrect(n.unwrap_or(100_000)),
    };
    let sim = SimConfig {
        system: config.system(),
        m: args.m,
        seed: config.seed.unwrap_or(0),
        stop_rule,
        warmup_deliveries: args.warmup,
    };
    sim.validate()?;
    let mut rows = Vec::new();
    let report = if args.trace.is_some() {
        run_simulation_traced(&sim, &mut rows)?
    } else {
        run_simulation(&sim)?
    };
    let comparison = compare_with_theory(&sim.system, &report)?;

    let mut summary: Box<dyn Write> = if cli.out.is_some() {
        Box::new(io::stdout())
    } else {
        Box::new(io::stderr())
    };
    writeln!(
        summary,
        "user  S_hat       se          S_theory    z_S      acc_hat   acc_theory  z_acc"
    )?;
    for c in &comparison {
        let (s, se) = c
            .system_time_empirical
            .map_or((f64::NAN, f64::NAN), |e| (e.mean, e.std_error));
        writeln!(
            summary,
            "{:<5} {:<11.5} {:<11.5} {:<11.5} {:<8} {:<9} {:<11.6} {}",
            c.user,
            s,
            se,
            c.system_time_theory,
            c.system_time_z.map_or("-".into(), |z| format!("{z:.3}")),
            c.accuracy_empirical
                .map_or("-".into(), |a| format!("{a:.6}")),
            c.accuracy_theory,
            c.accuracy_z.map_or("-".into(), |z| format!("{z:.3}")),
        )?;
    }

    #[derive(Serialize)]
    struct Body<'a> {
        simulation: &'a SimConfig,
        report: &'a quorum_core::simulator::SimReport,
        comparison: &'a [quorum_core::simulator::TheoryComparison],
    }
    let body = Body {
        simulation: &sim,
        report: &report,
        comparison: &comparison,
    };
    write_json(
        &cli.out,
        &Envelope {
            tool_version: TOOL_VERSION,
            command: "simulate",
            config: &config,
            body,
        },
    )?;
    if let Some(path) = &args.trace {
        write_trace_csv(&rows, create(path)?)?;
    }

    if args.assert_match {
        let worst = comparison
            .iter()
            .filter_map(|c| c.max_abs_z())
            .fold(0.0, f64::max);
        if worst > args.z_limit {
            return Err(Failure {
                code: 4,
                message: format!(
                    "simulation disagrees with closed form: max |z| = {worst:.3} > {}",
                    args.z_limit
                ),
            });
        }
    }
    Ok(())
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> CliResult<()> {
    let file = File::open(&args.matrix).map_err(|e| {
        Failure::input(format!("cannot read matrix {}: {e}", args.matrix.display()))
    })?;
    let matrix = ResponseMatrix::from_csv(file)
        .map_err(|e| Failure::input(format!("{}: {e}", args.matrix.display())))?;
    let curve = permutation_average_curve(&matrix, args.prior)?;
    write_curve_csv(&curve, output(&cli.out)?)?;
    if matrix.n_models() > 1 {
        eprintln!("note: even ensemble sizes break exact ties in favour of +1");
    }
    if args.bounds {
        let path = match (&args.bounds_out, &cli.out) {
            (Some(p), _) => p.clone(),
            (None, Some(out)) => sibling(out, ".bounds.csv"),
            (None, None) => return Err(Failure::input("--bounds needs --bounds-out or --out")),
        };
        let bounds = bounds_curve(&matrix, args.prior)?;
        write_bounds_csv(&bounds, create(&path)?)?;
        let outside = containment_violations(&curve, &bounds);
        if !outside.is_empty() {
            eprintln!("note: mean curve lies outside the bounds at m = {outside:?}");
        }
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> CliResult<()> {
    let matrix = synthetic_matrix(&args.models, args.rows, args.prior, cli.seed.unwrap_or(0))?;
    matrix.write_csv(output(&cli.out)?)?;
    Ok(())
}

fn cmd_config(cli: &Cli, args: &ThetaArg) -> CliResult<()> {
    let config = load_config(cli, args.theta)?;
    write_json(&cli.out, &config)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Accuracy(a) => cmd_accuracy(cli, a),
        Command::Optimize(a) => cmd_optimize(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Analyze(a) => cmd_analyze(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Config(a) => cmd_config(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
