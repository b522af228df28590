//! `censimpute` command-line front end.
//!
//! Every flag can also be set through an environment variable named
//! `CENSIMPUTE_<FLAG>` (upper case, dashes as underscores).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use censimpute::aftfit::Criterion;
use censimpute::condmean::Method;
use censimpute::imputation::{ColumnMap, Resampling};
use censimpute::{Error, Family};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "censimpute", version, about = "Conditional mean imputation for censored covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit imputation models and rank them by AIC or BIC.
    Fit(FitArgs),
    /// Write B imputed copies of a dataset, stacked with an imputation_id column.
    Impute(ImputeArgs),
    /// Impute, fit y ~ x + covariates by least squares, and pool with Rubin's rules.
    Analyze(AnalyzeArgs),
    /// Run a simulation cell, a strategy comparison, or a model-selection study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ResamplingArg {
    None,
    Bootstrap,
    BootstrapSample,
    ParameterDraw,
}

impl From<ResamplingArg> for Resampling {
    fn from(r: ResamplingArg) -> Self {
        match r {
            ResamplingArg::None => Resampling::None,
            ResamplingArg::Bootstrap => Resampling::Bootstrap,
            ResamplingArg::BootstrapSample => Resampling::BootstrapSample,
            ResamplingArg::ParameterDraw => Resampling::ParameterDraw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimMode {
    /// One estimator per run, as configured.
    Cell,
    /// All four conditional-mean strategies on the same replicates.
    Compare,
    /// Rank the candidate families by AIC and BIC in each replicate.
    Selection,
}

#[derive(Debug, Args)]
struct Output {
    /// Output file; standard output when absent.
    #[arg(long, short, env = "CENSIMPUTE_OUTPUT")]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv", env = "CENSIMPUTE_FORMAT")]
    format: Format,
    /// Worker threads; all logical cores when absent.
    #[arg(long, env = "CENSIMPUTE_WORKERS")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, short, env = "CENSIMPUTE_INPUT")]
    input: PathBuf,
    #[arg(long, default_value = "y", env = "CENSIMPUTE_OUTCOME")]
    outcome: String,
    /// Column holding the observed value (exact or censoring value).
    #[arg(long, default_value = "w", env = "CENSIMPUTE_OBSERVED")]
    observed: String,
    /// Column holding the 0/1 event indicator.
    #[arg(long, default_value = "delta", env = "CENSIMPUTE_EVENT")]
    event: String,
    /// Optional column with upper bounds of interval-censored rows.
    #[arg(long, env = "CENSIMPUTE_UPPER")]
    upper: Option<String>,
    /// Comma-separated fully observed covariates.
    #[arg(long, value_delimiter = ',', default_value = "z", env = "CENSIMPUTE_COVARIATES")]
    covariates: Vec<String>,
    /// Pieces for piecewise exponential models.
    #[arg(long, default_value_t = 10, env = "CENSIMPUTE_PIECES")]
    pieces: usize,
}

impl DataArgs {
    fn columns(&self) -> ColumnMap {
        ColumnMap {
            outcome: self.outcome.clone(),
            observed: self.observed.clone(),
            event: self.event.clone(),
            upper: self.upper.clone(),
            covariates: self.covariates.iter().filter(|c| !c.is_empty()).cloned().collect(),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// A family name, or `all` for every family with a closed-form mean.
    #[arg(long, default_value = "all", env = "CENSIMPUTE_FAMILY")]
    family: String,
    #[arg(long, default_value = "aic", value_parser = parse_criterion, env = "CENSIMPUTE_CRITERION")]
    criterion: Criterion,
    #[command(flatten)]
    out: Output,
}

#[derive(Debug, Args)]
struct ImputationArgs {
    #[arg(long, default_value = "lognormal", value_parser = parse_family, env = "CENSIMPUTE_FAMILY")]
    family: Family,
    /// analytic | stab-mean | stab-nomean | integral; family default when absent.
    #[arg(long, value_parser = parse_method, env = "CENSIMPUTE_STRATEGY")]
    strategy: Option<Method>,
    /// Number of imputations.
    #[arg(long = "B", alias = "b", default_value_t = 1, env = "CENSIMPUTE_B")]
    b: usize,
    #[arg(long, default_value_t = 2024, env = "CENSIMPUTE_SEED")]
    seed: u64,
    /// How imputations differ when B > 1.
    #[arg(long, value_enum, default_value = "bootstrap", env = "CENSIMPUTE_RESAMPLING")]
    resampling: ResamplingArg,
    /// Grid size for the stab-nomean strategy.
    #[arg(long, env = "CENSIMPUTE_GRID_SIZE")]
    grid_size: Option<usize>,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    imputation: ImputationArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    imputation: ImputationArgs,
    #[arg(long, default_value_t = 0.95, env = "CENSIMPUTE_CONFIDENCE")]
    confidence: f64,
    #[command(flatten)]
    out: Output,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Design file (JSON); defaults are used for absent fields.
    #[arg(long, env = "CENSIMPUTE_DESIGN", conflicts_with = "preset")]
    design: Option<PathBuf>,
    /// Named design: smoke, light, heavy, heavy-mi,
    /// misfit-{exponential,weibull,loglogistic,pwe}, selection, runtime.
    #[arg(long, env = "CENSIMPUTE_PRESET")]
    preset: Option<String>,
    #[arg(long, value_enum, default_value = "cell", env = "CENSIMPUTE_MODE")]
    mode: SimMode,
    #[arg(long, env = "CENSIMPUTE_N")]
    n: Option<usize>,
    #[arg(long, env = "CENSIMPUTE_REPLICATES")]
    replicates: Option<usize>,
    #[arg(long = "B", alias = "b", env = "CENSIMPUTE_B")]
    b: Option<usize>,
    #[arg(long, env = "CENSIMPUTE_SEED")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_family, env = "CENSIMPUTE_FAMILY")]
    family: Option<Family>,
    #[arg(long, value_parser = parse_method, env = "CENSIMPUTE_STRATEGY")]
    strategy: Option<Method>,
    #[arg(long, env = "CENSIMPUTE_CENSOR_RATE")]
    censor_rate: Option<f64>,
    #[arg(long, value_enum, env = "CENSIMPUTE_RESAMPLING")]
    resampling: Option<ResamplingArg>,
    /// Per-replicate rows (CSV) written here in addition to the summary.
    #[arg(long, env = "CENSIMPUTE_LONG")]
    long: Option<PathBuf>,
    /// Write the first replicate's dataset as CSV to this path and stop.
    #[arg(long, env = "CENSIMPUTE_EMIT_DATASET")]
    emit_dataset: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

/// 1 usage or configuration, 2 bad data, 3 numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidParams(_) | Error::Unsupported(_) | Error::MissingColumn(_) | Error::Io(_) => 1,
        Error::InvalidData(_)
        | Error::Csv(_)
        | Error::DimensionMismatch { .. }
        | Error::AllCensored
        | Error::TooFewRows { .. }
        | Error::RankDeficient { .. }
        | Error::DegenerateLikelihood { .. }
        | Error::EmptyIntervalMass { .. }
        | Error::LayoutMismatch => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Impute(a) => commands::impute(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
