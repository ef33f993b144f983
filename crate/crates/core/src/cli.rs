//! Command-line front end: `run`, `compare` and `sweep-beta`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric or I/O failure
//! (telemetry of the partial run is written first), 4 when `--strict` is set
//! and a certificate reports a failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::AquilaError;
use crate::experiment::{build_dataset, Experiment, RunOutcome};
use crate::policy::PolicySpec;
use crate::telemetry::{self, ComparisonRow};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "AQUILA_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "aquila-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CERTIFICATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "aquila", version, about = "Federated learning with adaptive quantization and lazy uploads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured policy and write rounds.csv, summary.json and certificates.json.
    Run {
        config: PathBuf,
        /// Exit with code 4 if any certificate fails.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several level policies on the same problem and write compare.csv.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        /// Optimality gap for rounds_to_tol (defaults to the config's tol).
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured policy for several skip thresholds and write sweep.csv.
    SweepBeta {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &AquilaError) -> i32 {
    match e {
        AquilaError::Config(_) | AquilaError::Policy(_) | AquilaError::Dimension { .. } => EXIT_CONFIG,
        AquilaError::Numeric(_) | AquilaError::DegenerateInput(_) | AquilaError::Io(_) => EXIT_NUMERIC,
    }
}

fn fail(e: &AquilaError) -> i32 {
    eprintln!("aquila: {e}");
    exit_code(e)
}

/// `--out`, then the config's `output_dir`, then the environment, then a fixed default.
fn output_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn load(path: &Path) -> Result<(RunConfig, Experiment), AquilaError> {
    let config = RunConfig::load(path)?;
    let experiment = Experiment::build(&config)?;
    Ok((config, experiment))
}

fn write_outcome(outcome: &RunOutcome, dir: &Path) -> Result<(), i32> {
    telemetry::write_run(outcome, dir).map_err(|e| fail(&e))?;
    if let Some(e) = &outcome.error {
        return Err(fail(e));
    }
    Ok(())
}

fn cmd_run(path: &Path, strict: bool, out: Option<PathBuf>) -> i32 {
    let (config, experiment) = match load(path) {
        Ok(x) => x,
        Err(e) => return fail(&e),
    };
    let dir = output_dir(out, &config);
    let outcome = experiment.run();
    if let Err(code) = write_outcome(&outcome, &dir) {
        return code;
    }
    if config.problem != crate::config::ProblemKind::Quadratic {
        let dumped = build_dataset(&config)
            .and_then(|(data, shards)| data.write_csv(&shards, &dir.join(telemetry::DATASET_FILE)));
        if let Err(e) = dumped {
            return fail(&e);
        }
    }
    if strict && outcome.certificates.any_fail() {
        eprintln!("aquila: a certificate failed (see {})", dir.join(telemetry::CERTIFICATES_FILE).display());
        return EXIT_CERTIFICATE;
    }
    EXIT_OK
}

fn label_dir(label: &str) -> String {
    label.replace([':', '/'], "_")
}

fn cmd_compare(path: &Path, policies: &[String], tol: Option<f64>, out: Option<PathBuf>) -> i32 {
    if policies.len() < 2 {
        return fail(&AquilaError::Config("compare needs at least two policies".into()));
    }
    let parsed: Result<Vec<PolicySpec>, AquilaError> = policies.iter().map(|p| p.parse()).collect();
    let parsed = match parsed {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return fail(&AquilaError::Config(format!("--tol must be positive, got {t}")));
        }
    }
    let mut config = match RunConfig::load(path) {
        Ok(x) => x,
        Err(e) => return fail(&e),
    };
    if let Some(t) = tol {
        config.tol = t;
    }
    let experiment = match Experiment::build(&config) {
        Ok(e) => e,
        Err(e) => return fail(&e),
    };
    let dir = output_dir(out, &config);
    let mut rows = Vec::new();
    let mut code = EXIT_OK;
    for policy in parsed {
        let outcome = experiment.run_with(policy, config.beta);
        let label = policy.to_string();
        if let Err(c) = write_outcome(&outcome, &dir.join(label_dir(&label))) {
            code = code.max(c);
        }
        rows.push(ComparisonRow::from_outcome(label, &outcome));
    }
    if let Err(e) = telemetry::write_comparison(&rows, "policy", &dir.join(telemetry::COMPARE_FILE)) {
        return fail(&e);
    }
    code
}

fn cmd_sweep(path: &Path, betas: &[f64], out: Option<PathBuf>) -> i32 {
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return fail(&AquilaError::Config(format!("beta must be >= 0, got {b}")));
    }
    let (config, experiment) = match load(path) {
        Ok(x) => x,
        Err(e) => return fail(&e),
    };
    let dir = output_dir(out, &config);
    let mut rows = Vec::new();
    let mut code = EXIT_OK;
    for &beta in betas {
        let outcome = experiment.run_with(config.level_policy, beta);
        let label = beta.to_string();
        if let Err(c) = write_outcome(&outcome, &dir.join(format!("beta_{label}"))) {
            code = code.max(c);
        }
        rows.push(ComparisonRow::from_outcome(label, &outcome));
    }
    if let Err(e) = telemetry::write_comparison(&rows, "beta", &dir.join(telemetry::SWEEP_FILE)) {
        return fail(&e);
    }
    code
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { config, strict, out } => cmd_run(&config, strict, out),
        Command::Compare { config, policies, tol, out } => cmd_compare(&config, &policies, tol, out),
        Command::SweepBeta { config, betas, out } => cmd_sweep(&config, &betas, out),
    }
}
