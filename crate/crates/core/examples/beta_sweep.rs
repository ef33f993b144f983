//! Sweeps the skip threshold and prints uploads and the final optimality gap per value.

use aquila::policy::PolicySpec;
use aquila::{Experiment, RunConfig};

fn main() -> aquila::Result<()> {
    let config = RunConfig {
        dim: 4,
        devices: 8,
        rounds: 150,
        level_policy: PolicySpec::fixed(8),
        ..RunConfig::default()
    };
    let experiment = Experiment::build(&config)?;
    let f_star = experiment.f_star().unwrap_or(0.0);
    println!("{:>6} {:>8} {:>12} {:>14}", "beta", "uploads", "bits", "final gap");
    for beta in [0.0, 0.01, 0.1, 0.25, 1.0, 1.25] {
        let outcome = experiment.run_with(config.level_policy, beta);
        println!(
            "{beta:>6} {:>8} {:>12} {:>14.6e}",
            outcome.uploads_total(),
            outcome.total_bits(),
            outcome.final_loss() - f_star
        );
    }
    Ok(())
}
