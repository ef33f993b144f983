//! Evaluates the lazy-upload test for one device at a few thresholds.

use aquila::policy::{should_skip, SkipPolicy};
use aquila::quantizer::{decode, encode, quantization_error};
use aquila::Vector;

fn main() -> aquila::Result<()> {
    let innovation = Vector::new(vec![0.02, -0.01, 0.015, 0.005])?;
    let theta_step = 0.05_f64;
    let alpha = 0.1;
    let q = encode(&innovation, 4)?;
    let err = quantization_error(&innovation, &q)?;
    let lhs = decode(&q).norm_sq() + err.epsilon.norm_sq();
    println!("||dq||^2 + ||eps||^2 = {lhs:.4e}, ||theta step||^2 = {:.4e}", theta_step * theta_step);
    for beta in [0.0, 0.01, 0.1, 0.25, 1.0] {
        let policy = SkipPolicy::new(beta, alpha)?;
        let threshold = policy.threshold(theta_step * theta_step);
        let skip = should_skip(&q, &err, theta_step * theta_step, &policy);
        println!("beta {beta:<5} threshold {threshold:.4e} -> {}", if skip { "skip" } else { "upload" });
    }
    Ok(())
}
