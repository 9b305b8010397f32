//! The `randinf` command line: `ci`, `simulate` and `check`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cs::{build_cs_grid, build_cs_with, draw_functions, grid_membership, grid_points, Algorithm, ConfidenceSetResult};
use crate::data::{load_csv, ColumnMap, ExperimentData};
use crate::error::{Error, Result};
use crate::estimators::{adjusted_wald, wald};
use crate::interval::IntervalUnion;
use crate::randomization::{draw_assignments, enumerate_assignments, DrawSet};
use crate::simulation::{make_population, run_coverage, Method};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DISAGREEMENT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

/// Tolerance on endpoint differences between the exact algorithms.
pub const ENDPOINT_TOL: f64 = 1e-8;
/// Grid points this close to an endpoint are not compared.
pub const GRID_EXCLUSION: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "randinf", version, about = "Randomization-based confidence sets for the LATE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Confidence set for the LATE from a CSV file.
    Ci(CiArgs),
    /// Coverage study on a simulated population.
    Simulate(SimulateArgs),
    /// Cross-validate the baseline, fast and grid algorithms on a CSV file.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "Y")]
    pub y: String,
    #[arg(long, default_value = "D")]
    pub d: String,
    #[arg(long, default_value = "Z")]
    pub z: String,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Vec<String>,
}

impl InputArgs {
    fn load(&self) -> Result<ExperimentData> {
        let colmap = ColumnMap { y: self.y.clone(), d: self.d.clone(), z: self.z.clone(), x: self.x.clone() };
        load_csv(&self.input, &colmap, true)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DrawArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of simulated assignments.
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    /// Use every assignment with the observed number of treated units instead of `m` draws.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Regression-adjust for the covariates.
    #[arg(long)]
    pub adjusted: bool,
    /// Append the observed assignment to the reference draws.
    #[arg(long)]
    pub include_observed: bool,
}

impl DrawArgs {
    fn draws(&self, data: &ExperimentData) -> Result<DrawSet> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("--alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let set = if self.exhaustive {
            DrawSet::from_draws(enumerate_assignments(data.n(), data.n1())?, self.seed)?
        } else {
            if self.m == 0 {
                return Err(Error::InvalidArgument("--m must be at least 1".into()));
            }
            draw_assignments(data.n(), data.n1(), self.m, self.seed)?
        };
        if self.include_observed {
            set.with_observed(data.z())
        } else {
            Ok(set)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub draws: DrawArgs,
    #[arg(long, value_enum, default_value_t = Algorithm::Fast)]
    pub algorithm: Algorithm,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub n1: usize,
    #[arg(long, default_value_t = 50)]
    pub compliers: usize,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub tau_a: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub tau_c: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tau_n: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    /// Number of standard normal covariates.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Seed for the population draw.
    #[arg(long, default_value_t = 0)]
    pub population_seed: u64,
    #[arg(long, default_value_t = 500)]
    pub sims: usize,
    #[arg(long, default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed for the assignments and reference draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Tsls, Method::RandomizationAdjusted])]
    pub methods: Vec<Method>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub draws: DrawArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DegenerateVariance(_) | Error::SingularDesign(_) | Error::UndefinedEstimate(_) | Error::ZeroPolynomial => {
            EXIT_DEGENERATE
        }
        _ => EXIT_INPUT,
    }
}

/// Sizes the global worker pool from `RANDINF_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("RANDINF_THREADS") else {
        return Ok(());
    };
    let threads: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("RANDINF_THREADS must be a positive integer, got `{v}`")))?;
    // a pool that is already initialized keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parses `args` and runs the command, writing the report to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return exit_code(&e);
    }
    let result = match &cli.command {
        Command::Ci(a) => cmd_ci(a).map(|s| (s, EXIT_OK)),
        Command::Simulate(a) => cmd_simulate(a).map(|s| (s, EXIT_OK)),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok((text, code)) => {
            let _ = out.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn ext(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn format_intervals(u: &IntervalUnion) -> String {
    if u.is_empty() {
        return "(empty)".into();
    }
    u.intervals().iter().map(|iv| format!("[{}, {}]", ext(iv.lo), ext(iv.hi))).collect::<Vec<_>>().join(" U ")
}

#[derive(Debug, Serialize)]
struct CiReport<'a> {
    intervals: &'a IntervalUnion,
    alpha: f64,
    m: usize,
    seed: u64,
    adjusted: bool,
    algorithm: Algorithm,
    include_observed: bool,
    #[serde(with = "crate::interval::opt_ext_real")]
    wald: Option<f64>,
    #[serde(with = "crate::interval::opt_ext_real")]
    adjusted_wald: Option<f64>,
    num_pairs: usize,
    num_intersections: usize,
    num_segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GridPoint {
    beta: f64,
    member: bool,
}

fn point_estimates(data: &ExperimentData) -> (Option<f64>, Option<f64>) {
    let w = wald(data).ok().map(|e| e.value);
    let aw = if data.k() > 0 { adjusted_wald(data).ok().map(|e| e.value) } else { w };
    (w, aw)
}

/// Default window for grid evaluation: the Wald estimate plus or minus ten
/// times the bounded length of the set, with 2001 points.
fn grid_window(grid: &GridArgs, center: Option<f64>, cs: Option<&IntervalUnion>) -> Result<(f64, f64, f64)> {
    let c = center.filter(|v| v.is_finite()).unwrap_or(0.0);
    let width = cs.map(IntervalUnion::finite_length).filter(|&w| w > 0.0).unwrap_or(1.0);
    let lo = grid.grid_lo.unwrap_or(c - 10.0 * width);
    let hi = grid.grid_hi.unwrap_or(c + 10.0 * width);
    let step = grid.grid_step.unwrap_or((hi - lo) / 2000.0);
    Ok((lo, hi, step))
}

pub fn cmd_ci(args: &CiArgs) -> Result<String> {
    let data = args.input.load()?;
    let draws = args.draws.draws(&data)?;
    let (w, aw) = point_estimates(&data);
    if args.algorithm == Algorithm::Grid {
        let (lo, hi, step) = grid_window(&args.grid, if args.draws.adjusted { aw } else { w }, None)?;
        let pts = build_cs_grid(&data, &draws, args.draws.alpha, args.draws.adjusted, lo, hi, step)?;
        return Ok(match args.format {
            Format::Json => to_json(&pts.iter().map(|&(beta, member)| GridPoint { beta, member }).collect::<Vec<_>>()),
            Format::Text => pts.iter().map(|(b, m)| format!("{b}\t{}\n", u8::from(*m))).collect(),
        });
    }
    let r = build_cs_with(&data, &draws, args.draws.alpha, args.draws.adjusted, args.algorithm)?;
    let report = CiReport {
        intervals: &r.intervals,
        alpha: r.alpha,
        m: r.m,
        seed: draws.seed,
        adjusted: r.adjusted,
        algorithm: r.algorithm,
        include_observed: args.draws.include_observed,
        wald: w,
        adjusted_wald: aw,
        num_pairs: r.stats.num_pairs,
        num_intersections: r.stats.num_intersections,
        num_segments: r.stats.num_segments,
        wall_time: args.timing.then_some(r.stats.wall_time),
    };
    Ok(match args.format {
        Format::Json => to_json(&report),
        Format::Text => {
            let opt = |v: Option<f64>| v.map_or("undefined".to_string(), ext);
            let mut s = format!(
                "{:.0}% confidence set ({}): {}\nwald: {}\nadjusted wald: {}\nm: {}  seed: {}  algorithm: {}  segments: {}\n",
                100.0 * (1.0 - r.alpha),
                if r.adjusted { "adjusted" } else { "unadjusted" },
                format_intervals(&r.intervals),
                opt(w),
                opt(aw),
                r.m,
                draws.seed,
                r.algorithm,
                r.stats.num_segments
            );
            if args.timing {
                s.push_str(&format!("time: {:.3}s\n", r.stats.wall_time));
            }
            s
        }
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let pop = make_population(
        args.n,
        args.compliers,
        args.tau_a,
        args.tau_c,
        args.tau_n,
        args.noise_sd,
        args.k,
        args.population_seed,
    )?;
    let mut report = run_coverage(&pop, args.n1, args.sims, args.m, args.alpha, &args.methods, args.seed)?;
    if !args.timing {
        report.methods.iter_mut().for_each(|m| m.mean_seconds = 0.0);
    }
    Ok(match args.format {
        Format::Json => to_json(&report),
        Format::Text => report.to_table(args.timing),
    })
}

/// Outcome of cross-validating the algorithms on one data set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub adjusted: bool,
    pub baseline: IntervalUnion,
    pub fast: IntervalUnion,
    pub same_count: bool,
    #[serde(with = "crate::interval::ext_real")]
    pub max_endpoint_diff: f64,
    pub grid_points: usize,
    pub grid_compared: usize,
    pub grid_disagreements: usize,
    pub ok: bool,
}

impl CheckReport {
    pub fn exit_code(&self) -> i32 {
        if self.ok {
            EXIT_OK
        } else {
            EXIT_DISAGREEMENT
        }
    }
}

type Builder<'a> = &'a dyn Fn(&ExperimentData, &DrawSet, f64, bool) -> Result<ConfidenceSetResult>;

/// Runs the baseline and `fast` builders and the grid test and compares them.
pub fn check_with(
    data: &ExperimentData,
    draws: &DrawSet,
    alpha: f64,
    adjusted: bool,
    grid: &GridArgs,
    fast: Builder<'_>,
) -> Result<CheckReport> {
    let base = build_cs_with(data, draws, alpha, adjusted, Algorithm::Baseline)?;
    let quick = fast(data, draws, alpha, adjusted)?;
    let same_count = base.intervals.len() == quick.intervals.len();
    let max_endpoint_diff = if same_count {
        base.intervals
            .intervals()
            .iter()
            .zip(quick.intervals.intervals())
            .flat_map(|(a, b)| [(a.lo, b.lo), (a.hi, b.hi)])
            .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() / (1.0 + x.abs()) })
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let center = base.wald;
    let (lo, hi, step) = grid_window(grid, center, Some(&base.intervals))?;
    let observed = crate::ar::coeffs(data, data.z(), adjusted)?;
    let functions = draw_functions(data, draws, adjusted)?;
    let pts = grid_membership(&observed, &functions, alpha, &grid_points(lo, hi, step)?);
    let mut compared = 0;
    let mut disagreements = 0;
    for &(b, member) in &pts {
        if quick.intervals.distance_to_endpoint(b) <= GRID_EXCLUSION {
            continue;
        }
        compared += 1;
        if member != quick.intervals.contains(b) {
            disagreements += 1;
        }
    }
    let ok = same_count && max_endpoint_diff <= ENDPOINT_TOL && disagreements == 0;
    Ok(CheckReport {
        adjusted,
        baseline: base.intervals,
        fast: quick.intervals,
        same_count,
        max_endpoint_diff,
        grid_points: pts.len(),
        grid_compared: compared,
        grid_disagreements: disagreements,
        ok,
    })
}

/// Returns the rendered report and the exit code.
pub fn cmd_check(args: &CheckArgs) -> Result<(String, i32)> {
    let data = args.input.load()?;
    let draws = args.draws.draws(&data)?;
    let fast = |d: &ExperimentData, s: &DrawSet, a: f64, adj: bool| build_cs_with(d, s, a, adj, Algorithm::Fast);
    let report = check_with(&data, &draws, args.draws.alpha, args.draws.adjusted, &args.grid, &fast)?;
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Text => format!(
            "baseline: {}\nfast:     {}\nmax endpoint diff: {}\ngrid: {} of {} points compared, {} disagreements\n{}\n",
            format_intervals(&report.baseline),
            format_intervals(&report.fast),
            ext(report.max_endpoint_diff),
            report.grid_compared,
            report.grid_points,
            report.grid_disagreements,
            if report.ok { "OK" } else { "DISAGREEMENT" }
        ),
    };
    Ok((text, report.exit_code()))
}
