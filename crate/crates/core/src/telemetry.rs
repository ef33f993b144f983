//! Output files: per-device round rows, run summary, certificates and the
//! comparison tables. Reals are printed with 17 significant digits so every
//! `f64` survives a text round trip.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::experiment::RunOutcome;
use crate::fl_core::RoundReport;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CERTIFICATES_FILE: &str = "certificates.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const ROUNDS_HEADER: [&str; 16] = [
    "round",
    "device_id",
    "uploaded",
    "bits",
    "level",
    "range",
    "innovation_norm2",
    "eps_norm2",
    "global_loss",
    "grad_norm2",
    "theta_diff_norm2",
    "gamma_est",
    "descent_lhs",
    "descent_rhs",
    "deviation_lhs",
    "deviation_rhs",
];

/// `x` with 17 significant digits.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// One row per device per round, in round then device order.
pub fn write_rounds_csv(reports: &[RoundReport], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{}", ROUNDS_HEADER.join(","))?;
    for r in reports {
        for d in &r.devices {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.round,
                d.device_id,
                d.uploaded,
                d.bits,
                d.level,
                real(d.range),
                real(d.innovation_norm),
                real(d.eps_norm),
                real(r.loss),
                real(r.grad_norm),
                real(r.theta_diff_norm),
                opt_real(r.gamma_est),
                opt_real(r.descent_lhs),
                opt_real(r.descent_rhs),
                opt_real(r.deviation_lhs),
                opt_real(r.deviation_rhs),
            )?;
        }
    }
    Ok(())
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| crate::error::AquilaError::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Writes `rounds.csv`, `summary.json` and `certificates.json` into `dir`.
pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rounds = BufWriter::new(File::create(dir.join(ROUNDS_FILE))?);
    write_rounds_csv(&outcome.reports, &mut rounds)?;
    rounds.flush()?;
    write_json(&outcome.summary, &dir.join(SUMMARY_FILE))?;
    write_json(&outcome.certificates, &dir.join(CERTIFICATES_FILE))?;
    Ok(())
}

/// One line of `compare.csv` or `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub final_loss: f64,
    pub total_bits: u64,
    pub rounds_to_tol: Option<usize>,
    pub uploads_total: u64,
}

impl ComparisonRow {
    pub fn from_outcome(label: String, outcome: &RunOutcome) -> Self {
        ComparisonRow {
            label,
            final_loss: outcome.summary.final_loss,
            total_bits: outcome.summary.total_bits,
            rounds_to_tol: outcome.summary.rounds_to_tol,
            uploads_total: outcome.summary.uploads_total,
        }
    }
}

/// `<first_column>,final_loss,total_bits,rounds_to_tol,uploads_total`.
pub fn write_comparison(rows: &[ComparisonRow], first_column: &str, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{first_column},final_loss,total_bits,rounds_to_tol,uploads_total")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label,
            real(r.final_loss),
            r.total_bits,
            r.rounds_to_tol.map(|k| k.to_string()).unwrap_or_default(),
            r.uploads_total
        )?;
    }
    out.flush()?;
    Ok(())
}
