//! Command-line front end: `estimate`, `simulate` and `compare`.
//!
//! Exit codes: 0 success, 1 input/output or usage error, 2 no maximum
//! likelihood estimator exists, 3 the algorithm failed to converge.

pub mod export;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use logconcure::comparators::{sup_distance, turnbull};
use logconcure::data::{compute_tau_grid, load_dataset, Dataset, GridPolicy, InputFormat};
use logconcure::em::{estimate, loglik, EmConfig, EmError, Estimate};
use logconcure::sim::{run_study, write_rep_csv, Inspection, SimScenario};
use serde::Serialize;

use export::{CurveExport, FitDocument};

/// Tolerance of the Turnbull comparator.
pub const TURNBULL_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "logconcure", version, about = "Log-concave MLE with a cure fraction for censored data")]
pub struct Cli {
    /// Print one JSON line per EM iteration to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the log-concave estimator to a data file.
    Estimate(EstimateArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Fit the log-concave and Turnbull estimators and compare them.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    GammaInterval,
    GammaCure,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `csv` (left,right) or `survival-csv` (time,status).
    #[arg(long, value_parser = parse_format)]
    pub format: InputFormat,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub cure: Switch,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted curves as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct Tuning {
    #[arg(long)]
    pub l1_tol: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub eps1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps2: f64,
    #[arg(long)]
    pub no_domain_reduction: bool,
    #[arg(long)]
    pub grid_max_spacing: Option<f64>,
    /// Cap on EM iterations.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Cure scenario only: count the inspection at time zero among the six.
    #[arg(long)]
    pub count_origin_inspection: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "on")]
    pub cure: Switch,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    s.parse()
}

/// Why a command failed, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    Io(anyhow::Error),
    NoMle(String),
    NonConvergence(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::NoMle(_) => 2,
            Failure::NonConvergence(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Io(e) => write!(f, "{e:#}"),
            Failure::NoMle(m) | Failure::NonConvergence(m) => f.write_str(m),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<EmError> for Failure {
    fn from(e: EmError) -> Self {
        let msg = e.to_string();
        match e {
            EmError::NoMle { .. } => Failure::NoMle(msg),
            EmError::Config(_) => Failure::Io(anyhow::anyhow!(msg)),
            // solver and numerical breakdowns
            _ => Failure::NonConvergence(msg),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if cli.verbose {
        init_trace();
    }
    let outcome = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn init_trace() {
    let _ = env_logger::Builder::new()
        .filter(Some("logconcure::trace"), log::LevelFilter::Info)
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .try_init();
}

impl Tuning {
    fn config(&self, allow_cure: bool) -> EmConfig {
        let defaults = EmConfig::default();
        EmConfig {
            allow_cure,
            l1_tol: self.l1_tol.unwrap_or(defaults.l1_tol),
            eps1: self.eps1,
            eps2: self.eps2,
            domain_reduction: !self.no_domain_reduction,
            grid_policy: self.grid_max_spacing.map_or(defaults.grid_policy, GridPolicy::with_spacing),
            max_iter: self.max_iter.unwrap_or(defaults.max_iter),
            ..defaults
        }
    }
}

fn load(a: &DataArgs) -> Result<Dataset, Failure> {
    load_dataset(&a.input, a.format)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(Failure::Io)
}

fn data_range(d: &Dataset) -> (f64, f64) {
    let tg = compute_tau_grid(d);
    (tg.first(), tg.last())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(anyhow::Error::from)
        .and_then(|_| Ok(writeln!(out)?))
        .and_then(|_| Ok(out.flush()?))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

fn write_curve(path: &Path, curve: &CurveExport) -> Result<(), Failure> {
    curve
        .write_csv(create(path)?)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

fn not_converged(est: &Estimate) -> Result<(), Failure> {
    if est.converged {
        return Ok(());
    }
    let iters = est.state.as_ref().map_or(0, |s| s.iter);
    Err(Failure::NonConvergence(format!(
        "EM stopped after {iters} iterations without reaching the L1 tolerance"
    )))
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let d = load(&a.data)?;
    let cfg = a.tuning.config(a.cure == Switch::On);
    let est = estimate(&d, &cfg)?;
    let doc = FitDocument::new(&est, data_range(&d), loglik(&est.fit, &d), cfg);
    write_json(&a.out, &doc)?;
    if let Some(path) = &a.curve {
        write_curve(path, &doc.curve())?;
    }
    not_converged(&est)
}

/// Summary file of `simulate`, without the per-replication rows.
#[derive(Debug, Serialize)]
struct SimulationDocument<'a> {
    scenario: &'a SimScenario,
    config: &'a EmConfig,
    mean_sup_s: f64,
    mean_abs_q_err: Option<f64>,
    comparator_mean_sup_s: f64,
    comparator_mean_abs_q_err: Option<f64>,
    failed: usize,
    non_converged: usize,
    inspections_include_origin: bool,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cure = a.scenario == Scenario::GammaCure;
    let mut scn = if cure {
        SimScenario::gamma_cure(a.n, a.reps, a.seed)
    } else {
        SimScenario::gamma_interval(a.n, a.reps, a.seed)
    };
    if a.count_origin_inspection {
        if !cure {
            return Err(Failure::Io(anyhow::anyhow!(
                "--count-origin-inspection applies to the gamma-cure scenario only"
            )));
        }
        scn.inspection = Inspection::PoissonRate1MaxSixWithOrigin;
    }
    scn.validate().map_err(|m| Failure::Io(anyhow::anyhow!(m)))?;
    let cfg = EmConfig {
        allow_cure: cure,
        ..EmConfig::default()
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = a.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("starting worker threads")?;
    let summary = pool.install(|| run_study(&scn, &cfg));

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let csv_path = a.out_dir.join("replications.csv");
    write_rep_csv(create(&csv_path)?, &summary)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let doc = SimulationDocument {
        scenario: &summary.scenario,
        config: &cfg,
        mean_sup_s: summary.mean_sup_s,
        mean_abs_q_err: summary.mean_abs_q_err,
        comparator_mean_sup_s: summary.comparator_mean_sup_s,
        comparator_mean_abs_q_err: summary.comparator_mean_abs_q_err,
        failed: summary.failed,
        non_converged: summary.non_converged,
        inspections_include_origin: summary.inspections_include_origin,
    };
    write_json(&a.out_dir.join("summary.json"), &doc)
}

/// Differences between the two estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    /// Largest gap between the survival curves, left limits included.
    pub sup_survival: f64,
    pub q_log_concave: f64,
    pub q_turnbull: f64,
    pub q_difference: f64,
}

#[derive(Debug, Serialize)]
struct ComparisonDocument {
    log_concave: CurveExport,
    turnbull: CurveExport,
    delta: Delta,
    special_case: Option<String>,
}

pub fn cmd_compare(a: &CompareArgs) -> Result<(), Failure> {
    let d = load(&a.data)?;
    let cfg = EmConfig {
        allow_cure: a.cure == Switch::On,
        ..EmConfig::default()
    };
    let est = estimate(&d, &cfg)?;
    let tb = turnbull(&d, TURNBULL_TOL);
    let range = data_range(&d);
    let lc_curve = CurveExport::from_fit(&est.fit, range);
    let tb_curve = CurveExport::from_step(&tb, range);
    let mut points = lc_curve.x.clone();
    points.extend_from_slice(&tb_curve.x);
    let (q_lc, q_tb) = (est.fit.q(), tb.mass_at_infinity());
    let doc = ComparisonDocument {
        delta: Delta {
            sup_survival: sup_distance(&est.fit, &tb, &points),
            q_log_concave: q_lc,
            q_turnbull: q_tb,
            q_difference: (q_lc - q_tb).abs(),
        },
        log_concave: lc_curve,
        turnbull: tb_curve,
        special_case: est.degenerate.as_ref().map(|s| s.description.clone()),
    };
    write_json(&a.out, &doc)?;
    not_converged(&est)
}
