//! Encodes an innovation at several bit widths and shows the decode error
//! against the `tau * R` worst case and the payload size.

use aquila::quantizer::{decode, encode, payload_bits, quantization_error};
use aquila::Vector;

fn main() -> aquila::Result<()> {
    let v = Vector::new(vec![0.9, -0.35, 0.05, -1.2, 0.6, 0.0, 0.41, -0.77])?;
    println!("innovation: {:?}", v.as_slice());
    println!("{:>4} {:>12} {:>12} {:>8}", "bits", "max |err|", "tau * R", "payload");
    for bits in [1u8, 2, 4, 8, 16] {
        let q = encode(&v, bits)?;
        let err = quantization_error(&v, &q)?;
        println!(
            "{:>4} {:>12.3e} {:>12.3e} {:>8}",
            bits,
            err.epsilon.norm_inf(),
            q.tau() * q.range(),
            payload_bits(&q)
        );
    }
    let q = encode(&v, 2)?;
    println!("2-bit codes {:?} decode to {:?}", q.codes(), decode(&q).as_slice());
    Ok(())
}
