//! Runs several level policies on one softmax-regression problem and prints
//! the bits each needs to match the full-precision gap to within 1%.

use aquila::config::ProblemKind;
use aquila::policy::PolicySpec;
use aquila::problems::PartitionMode;
use aquila::{Experiment, RunConfig};

fn main() -> aquila::Result<()> {
    let config = RunConfig {
        problem: ProblemKind::Logistic,
        dim: 10,
        classes: 10,
        samples: 1000,
        devices: 20,
        rounds: 200,
        partition: PartitionMode::NonIid { classes_per_device: 2 },
        ..RunConfig::default()
    };
    let experiment = Experiment::build(&config)?;
    let f_star = experiment.f_star().expect("classifier reference optimum");
    let reference = experiment.run_with(PolicySpec::full_precision(), config.beta);
    let target = 1.01 * (reference.final_loss() - f_star).max(1e-12);
    println!("f* = {f_star:.6}, target gap {target:.3e}");
    for label in ["fixed:32-full", "fixed:8", "fixed:4", "adaquantfl:2", "aquila"] {
        let policy: PolicySpec = label.parse()?;
        let outcome = experiment.run_with(policy, config.beta);
        let bits = outcome.bits_to_reach(f_star, target);
        println!(
            "{label:<14} final loss {:.5}  uploads {:>5}  bits to target {}",
            outcome.final_loss(),
            outcome.uploads_total(),
            bits.map_or("never".to_string(), |b| b.to_string())
        );
    }
    Ok(())
}
