//! Runs a small federated quadratic and prints the loss and upload trace.
//!
//! `cargo run --example quadratic_run -- fixed:8`

use aquila::policy::PolicySpec;
use aquila::{Experiment, RunConfig};

fn main() -> aquila::Result<()> {
    let policy: PolicySpec = std::env::args().nth(1).unwrap_or_else(|| "aquila".into()).parse()?;
    let config = RunConfig {
        dim: 2,
        cond: 2.0,
        devices: 10,
        rounds: 60,
        level_policy: policy,
        ..RunConfig::default()
    };
    let experiment = Experiment::build(&config)?;
    let outcome = experiment.run();
    if let Some(e) = &outcome.error {
        eprintln!("run stopped early: {e}");
    }
    let f_star = experiment.f_star().unwrap_or(0.0);
    for r in outcome.reports.iter().step_by(10) {
        println!(
            "round {:>3}  gap {:.3e}  uploads {:>2}/{}  bits {}",
            r.round,
            r.loss - f_star,
            r.uploads(),
            r.devices.len(),
            r.bits()
        );
    }
    let s = &outcome.summary;
    println!("{policy}: final gap {:.3e}, {} bits, {} uploads, {} skips", outcome.final_loss() - f_star, s.total_bits, s.uploads_total, s.skips_total);
    Ok(())
}
