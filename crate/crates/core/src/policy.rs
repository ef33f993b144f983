//! Quantization-level selection and the device skip criterion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AquilaError, Result};
use crate::numerics::Vector;
use crate::quantizer::{decode, granularity, QuantizationError, QuantizedInnovation, MAX_BITS, MIN_BITS};

/// Upper bound applied to every level rule.
pub const LEVEL_CAP: u8 = MAX_BITS;

/// How a device picks its bits per coordinate each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelPolicy {
    /// Deviation-minimizing level derived from the innovation itself.
    Aquila,
    /// Same level every round.
    Fixed(u8),
    /// Global-loss driven level `floor(sqrt(f0 / fk) * b0)`.
    AdaQuantFl(u8),
}

/// A level rule plus whether the skip test is active.
///
/// `lazy == false` is the full-participation reference: every device uploads
/// every round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub level: LevelPolicy,
    pub lazy: bool,
}

impl PolicySpec {
    pub fn aquila() -> Self {
        PolicySpec {
            level: LevelPolicy::Aquila,
            lazy: true,
        }
    }

    pub fn fixed(bits: u8) -> Self {
        PolicySpec {
            level: LevelPolicy::Fixed(bits),
            lazy: true,
        }
    }

    pub fn full_precision() -> Self {
        PolicySpec {
            level: LevelPolicy::Fixed(MAX_BITS),
            lazy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.level {
            LevelPolicy::Aquila => Ok(()),
            LevelPolicy::Fixed(b) | LevelPolicy::AdaQuantFl(b) => {
                if (MIN_BITS..=MAX_BITS).contains(&b) {
                    Ok(())
                } else {
                    Err(AquilaError::Policy(format!(
                        "level {b} outside [{MIN_BITS}, {MAX_BITS}]"
                    )))
                }
            }
        }
    }
}

impl FromStr for PolicySpec {
    type Err = AquilaError;

    /// Parses `aquila`, `fixed:<b>`, `adaquantfl:<b0>` or `fixed:32-full`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || AquilaError::Config(format!("unknown level policy '{s}'"));
        let spec = if s == "aquila" {
            PolicySpec::aquila()
        } else if s == "fixed:32-full" {
            PolicySpec::full_precision()
        } else if let Some(b) = s.strip_prefix("fixed:") {
            PolicySpec::fixed(b.parse().map_err(|_| bad())?)
        } else if let Some(b) = s.strip_prefix("adaquantfl:") {
            PolicySpec {
                level: LevelPolicy::AdaQuantFl(b.parse().map_err(|_| bad())?),
                lazy: true,
            }
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.level, self.lazy) {
            (LevelPolicy::Aquila, true) => write!(f, "aquila"),
            (LevelPolicy::Fixed(32), false) => write!(f, "fixed:32-full"),
            (LevelPolicy::Fixed(b), true) => write!(f, "fixed:{b}"),
            (LevelPolicy::AdaQuantFl(b), true) => write!(f, "adaquantfl:{b}"),
            (level, false) => write!(f, "{level:?}-full"),
        }
    }
}

/// Parameters of the skip rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipPolicy {
    pub beta: f64,
    pub alpha: f64,
}

impl SkipPolicy {
    pub fn new(beta: f64, alpha: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(AquilaError::Policy(format!("beta must be >= 0, got {beta}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(AquilaError::Policy(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(SkipPolicy { beta, alpha })
    }

    /// `(beta / alpha^2) * theta_diff_sq`
    pub fn threshold(&self, theta_diff_sq: f64) -> f64 {
        self.beta / (self.alpha * self.alpha) * theta_diff_sq
    }
}

/// Optimal level `floor(log2(R sqrt(d) / ||v||_2 + 1))`, capped at 32.
///
/// A zero innovation gets the smallest legal level, 1.
pub fn aquila_level(innovation: &Vector) -> u8 {
    let n2 = innovation.norm2();
    if n2 == 0.0 {
        return MIN_BITS;
    }
    let r = innovation.norm_inf();
    let d = innovation.dim() as f64;
    let level = (r * d.sqrt() / n2 + 1.0).log2().floor();
    // ||v||_2 <= sqrt(d) R keeps the argument >= 2 up to rounding
    level.clamp(f64::from(MIN_BITS), f64::from(LEVEL_CAP)) as u8
}

/// Continuous minimizer `||v||_2 / (R sqrt(d))` of the deviation objective.
pub fn optimal_tau(innovation: &Vector) -> Result<f64> {
    let r = innovation.norm_inf();
    if r == 0.0 {
        return Err(AquilaError::DegenerateInput(
            "optimal granularity undefined for a zero innovation".into(),
        ));
    }
    Ok(innovation.norm2() / (r * (innovation.dim() as f64).sqrt()))
}

/// `(||v||_2 - tau(bits) R sqrt(d))^2`, the per-device deviation bound term.
pub fn deviation_objective(innovation: &Vector, bits: u8) -> f64 {
    let r = innovation.norm_inf();
    let d = innovation.dim() as f64;
    let t = innovation.norm2() - granularity(bits) * r * d.sqrt();
    t * t
}

/// Loss-ratio level rule, floored at 1 and capped at 32.
pub fn adaquantfl_level(f0: f64, fk: f64, b0: u8) -> Result<u8> {
    if !(f0.is_finite() && f0 > 0.0 && fk.is_finite() && fk > 0.0) {
        return Err(AquilaError::Numeric(format!(
            "loss-ratio level needs positive losses, got f0={f0}, fk={fk}"
        )));
    }
    if !(MIN_BITS..=MAX_BITS).contains(&b0) {
        return Err(AquilaError::Policy(format!("b0 = {b0} outside [1, 32]")));
    }
    let raw = ((f0 / fk).sqrt() * f64::from(b0)).floor();
    if raw > f64::from(LEVEL_CAP) {
        log::debug!("loss-ratio level {raw} capped at {LEVEL_CAP}");
    }
    Ok(raw.clamp(f64::from(MIN_BITS), f64::from(LEVEL_CAP)) as u8)
}

/// Skip test: `||dq||^2 + ||eps||^2 <= (beta / alpha^2) ||theta^k - theta^{k-1}||^2`.
pub fn should_skip(
    dq: &QuantizedInnovation,
    err: &QuantizationError,
    theta_diff_sq: f64,
    p: &SkipPolicy,
) -> bool {
    skip_test(decode(dq).norm_sq(), err.epsilon.norm_sq(), theta_diff_sq, p)
}

pub(crate) fn skip_test(dq_sq: f64, eps_sq: f64, theta_diff_sq: f64, p: &SkipPolicy) -> bool {
    dq_sq + eps_sq <= p.threshold(theta_diff_sq)
}
