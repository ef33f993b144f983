//! Runs a quadratic and prints every certificate the bound ledger produces.

use aquila::theory_monitor::Certificate;
use aquila::{Experiment, RunConfig};

fn line(name: &str, c: &Certificate) {
    println!(
        "{name:<24} {:<18} evaluated {:>4}  violations {:>4}  worst margin {}",
        format!("{:?}", c.status),
        c.evaluated,
        c.violations,
        c.worst_margin.map_or("-".into(), |m| format!("{m:.3e}"))
    );
}

fn main() -> aquila::Result<()> {
    let config = RunConfig {
        dim: 2,
        cond: 2.0,
        rounds: 200,
        ..RunConfig::default()
    };
    let outcome = Experiment::build(&config)?.run();
    let c = &outcome.certificates;
    println!("gamma_max {:.3e}  L {:.3}  mu {:?}", c.gamma_max, c.l, c.mu);
    line("deviation bound", &c.deviation_bound);
    line("counterfactual identity", &c.counterfactual_identity);
    line("error sum", &c.error_sum_bound);
    line("descent", &c.descent);
    line("all-upload descent", &c.all_upload_descent);
    line("PL condition", &c.pl_condition);
    line("PL linear rate", &c.pl_linear_rate);
    line("non-convex rate", &c.nonconvex_rate);
    Ok(())
}
