//! Command-line front end: `run`, `bench`, `certify`, `distance` and
//! `check-grad`. Everything is reproducible from the config file and the
//! seed; no default seed exists.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{particle_complexity_sweep, SweepConfig};
use crate::certificates::{certify, finite_difference_check, sample_measure, sample_probes, CertGrid, FdReport};
use crate::error::Error;
use crate::flow::{run_with_source, BatchSource, InitScheme, IntegratorConfig, Method};
use crate::measures::{w2_distance, ParticleMeasure};
use crate::problems::{DataSource, ProblemConfig, ProblemSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_NOT_OPTIMAL: u8 = 3;
pub const EXIT_BAD_CONFIG: u8 = 64;
pub const OUT_ENV: &str = "MEAFLOW_OUT";

fn default_tolerance() -> f64 {
    1e-3
}

fn default_support_threshold() -> f64 {
    crate::certificates::DEFAULT_SUPPORT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    /// Defaults to `CertGrid::default_for` (1024 torus points or 4096
    /// seeded network points).
    #[serde(default)]
    pub grid: Option<CertGrid>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_support_threshold")]
    pub support_threshold: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            grid: None,
            tolerance: default_tolerance(),
            support_threshold: default_support_threshold(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("meaflow_out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub directory: PathBuf,
    /// Record wall-clock times in bench output.
    #[serde(default)]
    pub record_wallclock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            record_wallclock: false,
        }
    }
}

/// Top-level configuration of `meaflow run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory unless `--seed` is given.
    #[serde(default)]
    pub seed: Option<u64>,
    pub problem: ProblemConfig,
    /// Defaults to the family's canonical initialization with 100 particles.
    #[serde(default)]
    pub init: Option<InitScheme>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Why a command failed, mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    BadConfig(String),
    Diverged(String),
    NotOptimal(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::BadConfig(_) => EXIT_BAD_CONFIG,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::NotOptimal(_) => EXIT_NOT_OPTIMAL,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::BadConfig(m) | CliError::Diverged(m) | CliError::NotOptimal(m) | CliError::Other(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            Error::Config(_) | Error::Json(_) | Error::Shape { .. } | Error::Dimension(_) => {
                CliError::BadConfig(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses JSON strictly, reporting the line, column and offending field.
pub fn parse_strict<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::BadConfig(format!("{}: cannot read: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::BadConfig(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve_seed(config: Option<u64>, flag: Option<u64>) -> CliResult<u64> {
    flag.or(config).ok_or_else(|| {
        CliError::BadConfig("no seed: set \"seed\" in the config or pass --seed".into())
    })
}

fn output_dir(config: &OutputConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => config.directory.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Other(e.to_string())
}

/// Summary of a `run` invocation.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: usize,
    pub time: f64,
    pub termination: crate::flow::Termination,
    pub final_energy: Option<f64>,
    pub certificate: crate::certificates::CertificateReport,
    pub output_dir: PathBuf,
}

/// `meaflow run`: integrate the flow, export the trajectory and certify the
/// terminal state.
pub fn cmd_run(
    config_path: &Path,
    seed_flag: Option<u64>,
    out_flag: Option<&Path>,
    require_optimal: bool,
) -> CliResult<RunSummary> {
    let config: RunConfig = parse_strict(config_path)?;
    let seed = resolve_seed(config.seed, seed_flag)?;
    config.integrator.validate()?;
    let spec = config.problem.build(seed, &base_dir(config_path))?;
    let scheme = config
        .init
        .clone()
        .unwrap_or_else(|| InitScheme::canonical(spec.family(), 100));
    let teacher = match (&config.problem.data, config.integrator.method) {
        (DataSource::Teacher { teacher_size, noise, .. }, Method::Sgd { .. }) => Some(crate::bench::make_teacher(
            spec.family(),
            *teacher_size,
            seed,
            *noise,
        )?),
        _ => None,
    };
    let source = match &teacher {
        Some(t) => BatchSource::Generator(t),
        None => BatchSource::Dataset,
    };
    let out = run_with_source(&spec, &scheme, &config.integrator, seed, &source)?;
    let dir = output_dir(&config.output, out_flag);
    out.export(&dir)?;
    let mut resolved = config.clone();
    resolved.seed = Some(seed);
    resolved.init = Some(scheme);
    write_json(&dir.join("config.json"), &resolved)?;

    let mu = &out.state.measure;
    let grid = config
        .certificate
        .grid
        .clone()
        .unwrap_or_else(|| CertGrid::default_for(&spec, mu, seed));
    let report = certify(
        &spec,
        mu,
        &grid,
        config.certificate.tolerance,
        config.certificate.support_threshold,
    )?;
    write_json(&dir.join("certificate.json"), &report)?;
    let summary = RunSummary {
        seed,
        steps: out.state.step_index,
        time: out.state.time,
        termination: out.termination,
        final_energy: out.state.energy(),
        certificate: report,
        output_dir: dir,
    };
    if require_optimal && !summary.certificate.pass {
        return Err(CliError::NotOptimal(summary.certificate.summary_line()));
    }
    Ok(summary)
}

/// `meaflow bench`: particle-complexity sweep, written as CSV plus JSON.
pub fn cmd_bench(config_path: &Path, seed_flag: Option<u64>, out_flag: Option<&Path>) -> CliResult<crate::bench::SweepOutput> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::BadConfig(format!("{}: cannot read: {e}", config_path.display())))?;
    // The sweep config is strict, so peel off the optional output section first.
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::BadConfig(format!("{}:{}:{}: {e}", config_path.display(), e.line(), e.column())))?;
    let output: OutputConfig = match value.as_object_mut().and_then(|o| o.remove("output")) {
        Some(v) => serde_json::from_value(v).map_err(|e| CliError::BadConfig(format!("{}: output: {e}", config_path.display())))?,
        None => OutputConfig::default(),
    };
    let mut sweep: SweepConfig = serde_json::from_value(value)
        .map_err(|e| CliError::BadConfig(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed_flag {
        sweep.seeds = vec![s];
    }
    sweep.record_wallclock |= output.record_wallclock;
    let result = particle_complexity_sweep(&sweep)?;
    let dir = output_dir(&output, out_flag);
    result.write(&dir)?;
    Ok(result)
}

/// Problem description for `certify` and `check-grad`: either a full run
/// configuration or a bare problem section.
fn load_problem(path: &Path, seed_flag: Option<u64>) -> CliResult<(ProblemSpec, CertificateConfig, Option<u64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::BadConfig(format!("{}: cannot read: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::BadConfig(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    let (problem, cert, seed) = if value.get("problem").is_some() {
        let rc: RunConfig = parse_strict(path)?;
        (rc.problem, rc.certificate, rc.seed)
    } else {
        (parse_strict::<ProblemConfig>(path)?, CertificateConfig::default(), None)
    };
    let seed = seed_flag.or(seed);
    let needs_seed = matches!(problem.data, DataSource::Teacher { .. });
    let build_seed = match (seed, needs_seed) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => return Err(CliError::BadConfig("teacher data needs a seed: pass --seed".into())),
    };
    Ok((problem.build(build_seed, &base_dir(path))?, cert, seed))
}

/// `meaflow certify`.
pub fn cmd_certify(
    measure_path: &Path,
    problem_path: &Path,
    seed_flag: Option<u64>,
    tolerance: Option<f64>,
    out_flag: Option<&Path>,
) -> CliResult<crate::certificates::CertificateReport> {
    let (spec, cert, seed) = load_problem(problem_path, seed_flag)?;
    let mu = ParticleMeasure::load(measure_path).map_err(|e| CliError::BadConfig(format!("{}: {e}", measure_path.display())))?;
    let grid = match cert.grid {
        Some(g) => g,
        None if spec.family().is_network() => {
            let s = seed.ok_or_else(|| CliError::BadConfig("network certificate grids are seeded: pass --seed".into()))?;
            CertGrid::default_for(&spec, &mu, s)
        }
        None => CertGrid::default_for(&spec, &mu, 0),
    };
    let report = certify(&spec, &mu, &grid, tolerance.unwrap_or(cert.tolerance), cert.support_threshold)?;
    if let Some(dir) = out_flag.map(Path::to_path_buf).or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)) {
        std::fs::create_dir_all(&dir).map_err(io_err)?;
        write_json(&dir.join("certificate.json"), &report)?;
    }
    Ok(report)
}

/// `meaflow distance`.
pub fn cmd_distance(a: &Path, b: &Path) -> CliResult<f64> {
    let mu = ParticleMeasure::load(a).map_err(|e| CliError::BadConfig(format!("{}: {e}", a.display())))?;
    let nu = ParticleMeasure::load(b).map_err(|e| CliError::BadConfig(format!("{}: {e}", b.display())))?;
    Ok(w2_distance(&mu, &nu)?)
}

/// `meaflow check-grad`: finite-difference validation at random points.
pub fn cmd_check_grad(problem_path: &Path, seed_flag: Option<u64>, points: usize) -> CliResult<FdReport> {
    let (spec, _, seed) = load_problem(problem_path, seed_flag)?;
    let seed = seed.ok_or_else(|| CliError::BadConfig("no seed: pass --seed".into()))?;
    let probes = sample_probes(&spec, points, seed);
    let mu = sample_measure(&spec, 5, seed)?;
    Ok(finite_difference_check(&spec, &mu, &probes)?)
}

#[derive(Parser, Debug)]
#[command(name = "meaflow", version, about = "Particle gradient flows over measures")]
pub struct Cli {
    /// Worker threads for sweeps (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate a particle flow and certify the result.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 3 unless the terminal state is certified optimal.
        #[arg(long)]
        require_optimal: bool,
    },
    /// Particle-complexity sweep (particle flow against the fixed grid).
    Bench {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the optimality conditions for a saved measure.
    Certify {
        measure: PathBuf,
        problem: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wasserstein-2 distance between two saved measures.
    Distance { a: PathBuf, b: PathBuf },
    /// Compare analytic gradients with finite differences.
    CheckGrad {
        problem: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> u8 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return EXIT_FAILURE;
        }
    }
    let result: CliResult<()> = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            require_optimal,
        } => cmd_run(&config, seed, out.as_deref(), require_optimal).map(|s| {
            println!(
                "{} after {} steps (t = {:.6}, F = {}): {}",
                serde_json::to_string(&s.termination).unwrap_or_default().trim_matches('"'),
                s.steps,
                s.time,
                s.final_energy.map(|e| format!("{e:.10e}")).unwrap_or_default(),
                s.certificate.summary_line()
            );
        }),
        Command::Bench { config, seed, out } => cmd_bench(&config, seed, out.as_deref()).map(|r| {
            println!("{:<14} {:>6} {:>6} {:>10} {:>16}", "method", "m", "runs", "certified", "geomean_excess");
            for g in &r.summary {
                println!(
                    "{:<14} {:>6} {:>6} {:>10} {:>16}",
                    g.method.tag(),
                    g.m,
                    g.runs,
                    g.certified,
                    g.geometric_mean_excess.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
                );
            }
        }),
        Command::Certify {
            measure,
            problem,
            seed,
            tolerance,
            out,
        } => cmd_certify(&measure, &problem, seed, tolerance, out.as_deref()).and_then(|r| {
            println!("{}", r.summary_line());
            if r.pass {
                Ok(())
            } else {
                Err(CliError::NotOptimal(r.summary_line()))
            }
        }),
        Command::Distance { a, b } => cmd_distance(&a, &b).map(|d| println!("{d:?}")),
        Command::CheckGrad { problem, seed, points } => cmd_check_grad(&problem, seed, points).and_then(|r| {
            println!(
                "max relative error: f_prime_grad {:.3e}, velocity {:.3e} ({} points)",
                r.max_rel_error_fprime, r.max_rel_error_velocity, r.points
            );
            if r.max_rel_error() <= 1e-6 {
                Ok(())
            } else {
                Err(CliError::Other("gradient check above 1e-6".into()))
            }
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if !matches!(e, CliError::NotOptimal(_)) {
                eprintln!("error: {}", e.message());
            }
            e.exit_code()
        }
    }
}

/// Entry point shared by the binary.
pub fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => ExitCode::from(execute(cli)),
        Err(e) => {
            // clap reports usage errors with status 2, which is taken by
            // divergence here.
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(EXIT_BAD_CONFIG)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
