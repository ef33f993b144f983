//! Compares the deviation-minimizing level with brute-force enumeration of
//! the deviation objective, for a dense and a one-hot innovation.

use aquila::policy::{aquila_level, deviation_objective};
use aquila::Vector;

fn report(name: &str, v: &Vector) {
    let chosen = aquila_level(v);
    let best = (1u8..=32)
        .min_by(|&a, &b| deviation_objective(v, a).total_cmp(&deviation_objective(v, b)))
        .unwrap_or(1);
    println!("{name}: level rule picks {chosen} bits, enumeration picks {best}");
    for b in [1u8, 2, 3, 4, 8] {
        println!("  b = {b:>2}  objective {:.4e}", deviation_objective(v, b));
    }
}

fn main() -> aquila::Result<()> {
    let dense = Vector::new((0..16).map(|i| ((i as f64) * 0.7).sin()).collect())?;
    let mut spike = vec![1e-3; 16];
    spike[5] = 1.0;
    report("dense", &dense);
    report("one-hot", &Vector::new(spike)?);
    Ok(())
}
