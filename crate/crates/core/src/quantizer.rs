//! Deterministic mid-tread quantization of gradient innovations.
//!
//! An innovation `v` is mapped onto the lattice
//! `{-R + 2 tau R j : j = 0..=2^b - 1}` with `R = ||v||_inf` and
//! `tau = 1 / (2^b - 1)`. Codes are the lattice indices `j`, rounded to the
//! nearest lattice point, so the per-coordinate error never exceeds `tau R`.

use serde::{Deserialize, Serialize};

use crate::error::{AquilaError, Result};
use crate::numerics::Vector;

pub const MIN_BITS: u8 = 1;
pub const MAX_BITS: u8 = 32;

/// Bits charged per upload on top of the codes: one 32-bit float for the
/// range plus an 8-bit level header.
pub const DEFAULT_HEADER_BITS: u64 = 32 + 8;

/// Granularity `tau = 1 / (2^bits - 1)`.
pub fn granularity(bits: u8) -> f64 {
    1.0 / max_code(bits) as f64
}

fn max_code(bits: u8) -> u64 {
    (1u64 << bits) - 1
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(AquilaError::Policy(format!(
            "quantization level {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

/// Integer codes plus the `(bits, range)` metadata needed to decode them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedInnovation {
    codes: Vec<u32>,
    bits: u8,
    range: f64,
}

impl QuantizedInnovation {
    /// Reassembles a payload received from elsewhere, validating its invariants.
    pub fn from_parts(codes: Vec<u32>, bits: u8, range: f64) -> Result<Self> {
        check_bits(bits)?;
        if codes.is_empty() {
            return Err(AquilaError::dim(1, 0));
        }
        if !range.is_finite() || range < 0.0 {
            return Err(AquilaError::Numeric(format!("invalid range {range}")));
        }
        let top = max_code(bits);
        if let Some(c) = codes.iter().find(|&&c| u64::from(c) > top) {
            return Err(AquilaError::Policy(format!(
                "code {c} exceeds {top} for {bits}-bit quantization"
            )));
        }
        Ok(QuantizedInnovation { codes, bits, range })
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn tau(&self) -> f64 {
        granularity(self.bits)
    }

    pub fn dim(&self) -> usize {
        self.codes.len()
    }
}

/// Innovation minus its dequantized value.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationError {
    pub epsilon: Vector,
}

/// Quantizes `innovation` with `bits` bits per coordinate.
pub fn encode(innovation: &Vector, bits: u8) -> Result<QuantizedInnovation> {
    encode_counting_clamps(innovation, bits).map(|(q, _)| q)
}

/// Like [`encode`], also reporting how many codes had to be clamped back into
/// `[0, 2^bits - 1]` after floating-point round-up at the range boundary.
pub fn encode_counting_clamps(
    innovation: &Vector,
    bits: u8,
) -> Result<(QuantizedInnovation, usize)> {
    check_bits(bits)?;
    innovation.ensure_finite("innovation")?;
    let range = innovation.norm_inf();
    let d = innovation.dim();
    if range == 0.0 {
        return Ok((
            QuantizedInnovation {
                codes: vec![0; d],
                bits,
                range: 0.0,
            },
            0,
        ));
    }

    let top = max_code(bits);
    let step = 2.0 * granularity(bits) * range;
    let mut clamps = 0;
    let codes = innovation
        .as_slice()
        .iter()
        .map(|&v| {
            let raw = ((v + range) / step + 0.5).floor();
            if raw < 0.0 {
                clamps += 1;
                0
            } else if raw > top as f64 {
                clamps += 1;
                top as u32
            } else {
                raw as u32
            }
        })
        .collect();
    if clamps > 0 {
        log::debug!("clamped {clamps} boundary code(s) at {bits} bits");
    }
    Ok((QuantizedInnovation { codes, bits, range }, clamps))
}

/// `2 tau R psi - R 1`, or the zero vector when `R == 0`.
pub fn decode(q: &QuantizedInnovation) -> Vector {
    if q.range == 0.0 {
        return Vector::zeros(q.dim());
    }
    let step = 2.0 * q.tau() * q.range;
    Vector::from_raw(
        q.codes
            .iter()
            .map(|&c| step * f64::from(c) - q.range)
            .collect(),
    )
}

pub fn quantization_error(
    innovation: &Vector,
    q: &QuantizedInnovation,
) -> Result<QuantizationError> {
    if innovation.dim() != q.dim() {
        return Err(AquilaError::dim(q.dim(), innovation.dim()));
    }
    Ok(QuantizationError {
        epsilon: innovation.sub(&decode(q))?,
    })
}

/// Upload cost with the default 40-bit header.
pub fn payload_bits(q: &QuantizedInnovation) -> u64 {
    payload_bits_with_header(q, DEFAULT_HEADER_BITS)
}

pub fn payload_bits_with_header(q: &QuantizedInnovation, header_bits: u64) -> u64 {
    q.dim() as u64 * u64::from(q.bits) + header_bits
}

/// Scalar floor quantizer `floor(v / step) * step`.
pub fn floor_quantize(v: f64, step: f64) -> f64 {
    (v / step).floor() * step
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn lower_lattice_point() {
        let x = v(&[-1.0]);
        let q = encode(&x, 2).unwrap();
        assert_eq!(q.codes(), &[0]);
        assert_eq!(decode(&q), v(&[-1.0]));
        assert_eq!(quantization_error(&x, &q).unwrap().epsilon, v(&[0.0]));
    }

    #[test]
    fn half_value_two_bits() {
        // R = 1 needs a companion coordinate at magnitude 1.
        let x = v(&[0.5, 1.0]);
        let q = encode(&x, 2).unwrap();
        // floor(1.5 / (2/3) + 0.5) = floor(2.75) = 2
        assert_eq!(q.codes()[0], 2);
        assert_eq!(q.range(), 1.0);
        let dq = decode(&q);
        assert!((dq[0] - 1.0 / 3.0).abs() < 1e-15);
        let eps = quantization_error(&x, &q).unwrap().epsilon;
        assert!((eps[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!(eps[0] <= q.tau() * q.range());
    }

    #[test]
    fn decode_examples() {
        let q = QuantizedInnovation::from_parts(vec![0, 0, 0], 3, 1.0).unwrap();
        assert_eq!(decode(&q), Vector::filled(3, -1.0));
        let q = QuantizedInnovation::from_parts(vec![2], 2, 1.0).unwrap();
        assert!((decode(&q)[0] - 1.0 / 3.0).abs() < 1e-15);
        let q = QuantizedInnovation::from_parts(vec![3, 1, 2], 2, 0.0).unwrap();
        assert!(decode(&q).is_zero());
    }

    #[test]
    fn zero_innovation_is_degenerate() {
        let x = Vector::zeros(4);
        let q = encode(&x, 5).unwrap();
        assert_eq!(q.range(), 0.0);
        assert!(q.codes().iter().all(|&c| c == 0));
        assert!(decode(&q).is_zero());
        assert!(quantization_error(&x, &q).unwrap().epsilon.is_zero());
    }

    #[test]
    fn on_lattice_has_zero_error() {
        // bits = 1 lattice is {-R, R}
        let x = v(&[2.0, -2.0, 2.0]);
        let q = encode(&x, 1).unwrap();
        assert!(quantization_error(&x, &q).unwrap().epsilon.is_zero());
    }

    #[test]
    fn payload_bit_examples() {
        let q = encode(&Vector::filled(10, 0.3), 4).unwrap();
        assert_eq!(payload_bits(&q), 80);
        let q = encode(&v(&[0.7]), 1).unwrap();
        assert_eq!(payload_bits(&q), 41);
        assert_eq!(payload_bits_with_header(&q, 0), 1);
    }

    #[test]
    fn floor_quantizer_example() {
        assert_eq!(floor_quantize(2.4, 1.0), 2.0);
    }

    #[test]
    fn rejects_bad_bits_and_non_finite() {
        assert!(matches!(encode(&v(&[1.0]), 0), Err(AquilaError::Policy(_))));
        assert!(matches!(encode(&v(&[1.0]), 33), Err(AquilaError::Policy(_))));
        assert!(QuantizedInnovation::from_parts(vec![4], 2, 1.0).is_err());
        assert!(QuantizedInnovation::from_parts(vec![1], 2, -1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_in_error() {
        let q = encode(&v(&[1.0, 2.0]), 3).unwrap();
        assert!(matches!(
            quantization_error(&v(&[1.0]), &q),
            Err(AquilaError::Dimension { .. })
        ));
    }

    #[test]
    fn thirty_two_bits_is_nearly_exact() {
        let x = v(&[1.0]);
        let q = encode(&x, 32).unwrap();
        assert_eq!(u64::from(q.codes()[0]), (1u64 << 32) - 1);
        assert!((decode(&q)[0] - 1.0).abs() <= 2f64.powi(-31));
    }

    #[test]
    fn error_bound_strictly_decreasing_in_bits() {
        for b in MIN_BITS..MAX_BITS {
            assert!(granularity(b + 1) < granularity(b));
        }
    }

    fn innovation_and_bits() -> impl Strategy<Value = (Vec<f64>, u8)> {
        (
            prop::collection::vec(-1e4f64..1e4, 1..128),
            MIN_BITS..=MAX_BITS,
        )
    }

    proptest! {
        #[test]
        fn half_step_bound_and_code_range((data, bits) in innovation_and_bits()) {
            let x = Vector::new(data).unwrap();
            let (q, clamps) = encode_counting_clamps(&x, bits).unwrap();
            let top = (1u64 << bits) - 1;
            prop_assert!(q.codes().iter().all(|&c| u64::from(c) <= top));
            let dq = decode(&q);
            let r = q.range();
            prop_assert!(dq.as_slice().iter().all(|&c| c >= -r && c <= r * (1.0 + 1e-15)));
            let eps = quantization_error(&x, &q).unwrap().epsilon;
            prop_assert!(eps.norm_inf() <= q.tau() * r + 1e-12 * r.max(1.0));
            // clamps only at the boundary coordinates
            if clamps > 0 {
                let boundary = x.as_slice().iter().filter(|v| v.abs() == r).count();
                prop_assert!(clamps <= boundary);
            }
        }

        #[test]
        fn decode_is_affine_map((data, bits) in innovation_and_bits()) {
            let x = Vector::new(data).unwrap();
            let q = encode(&x, bits).unwrap();
            let tau = 1.0 / ((2f64).powi(bits as i32) - 1.0);
            let r = q.range();
            let dq = decode(&q);
            for (i, &c) in q.codes().iter().enumerate() {
                let expect = if r == 0.0 { 0.0 } else { 2.0 * tau * r * c as f64 - r };
                prop_assert!((dq[i] - expect).abs() <= 1e-12 * r.max(1.0));
            }
        }
    }
}
