//! Trains an MLP where half the devices hold a sliced sub-model, and shows
//! how many devices own each parameter.

use aquila::config::ProblemKind;
use aquila::policy::PolicySpec;
use aquila::{Experiment, RunConfig};

fn main() -> aquila::Result<()> {
    let config = RunConfig {
        problem: ProblemKind::Mlp,
        dim: 6,
        classes: 4,
        hidden: 8,
        samples: 400,
        devices: 6,
        rounds: 80,
        level_policy: PolicySpec::fixed(8),
        hetero_ratios: Some(vec![1.0, 0.5]),
        ..RunConfig::default()
    };
    let experiment = Experiment::build(&config)?;
    let problem = experiment.problem();
    let mask = problem.submodel_mask(0.5);
    println!("model has {} parameters, a 0.5 slice keeps {}", problem.dim(), mask.count());
    let outcome = experiment.run();
    let s = &outcome.summary;
    println!("bits per device: {:?}", s.bits_per_device);
    println!(
        "loss {:.4} -> {:.4}, accuracy {:?}",
        s.initial_loss, s.final_loss, s.final_accuracy
    );
    Ok(())
}
