//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; missing keys take the defaults of [`RunConfig::default`].
//! [`RunConfig::to_text`] writes every key, and parsing that text gives back
//! an identical config (floats use Rust's shortest round-trip formatting).
//!
//! | key | meaning |
//! |-----|---------|
//! | `problem` | `quadratic`, `logistic` or `mlp` |
//! | `dim` | model dimension (quadratic) or feature count (classifiers) |
//! | `cond` | eigenvalue spread of random quadratic Hessians |
//! | `spread` | scale of the per-device quadratic centers |
//! | `quadratic_diag` | comma list; a shared diagonal Hessian instead of a random one |
//! | `classes`, `samples`, `hidden`, `l2`, `separation` | classifier data and model |
//! | `devices`, `rounds`, `alpha`, `beta` | federated run |
//! | `level_policy` | `aquila`, `fixed:<b>`, `adaquantfl:<b0>`, `fixed:32-full` |
//! | `partition` | `iid` or `noniid:<classes per device>` |
//! | `hetero_ratios` | comma list of sub-model ratios, or `none` |
//! | `seed`, `header_bits` | randomness and payload header size |
//! | `gamma` | error-ratio constant override, or `none` to measure it |
//! | `p` | Young's-inequality parameter of the all-upload check |
//! | `tol` | optimality gap used by `rounds_to_tol` |
//! | `output_dir` | default output directory, or `none` |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{AquilaError, Result};
use crate::policy::PolicySpec;
use crate::problems::{HeteroSpec, PartitionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl ProblemKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "quadratic" => Some(ProblemKind::Quadratic),
            "logistic" => Some(ProblemKind::Logistic),
            "mlp" => Some(ProblemKind::Mlp),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Logistic => "logistic",
            ProblemKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub dim: usize,
    pub cond: f64,
    pub spread: f64,
    pub quadratic_diag: Option<Vec<f64>>,
    pub classes: usize,
    pub samples: usize,
    pub hidden: usize,
    pub l2: f64,
    pub separation: f64,
    pub devices: usize,
    pub rounds: usize,
    pub alpha: f64,
    pub beta: f64,
    pub level_policy: PolicySpec,
    pub partition: PartitionMode,
    pub hetero_ratios: Option<Vec<f64>>,
    pub seed: u64,
    pub header_bits: u64,
    pub gamma: Option<f64>,
    pub p: f64,
    pub tol: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemKind::Quadratic,
            dim: 10,
            cond: 10.0,
            spread: 1.0,
            quadratic_diag: None,
            classes: 10,
            samples: 1000,
            hidden: 16,
            l2: 1e-3,
            separation: 2.0,
            devices: 10,
            rounds: 100,
            alpha: 0.1,
            beta: 0.25,
            level_policy: PolicySpec::aquila(),
            partition: PartitionMode::Iid,
            hetero_ratios: None,
            seed: 0,
            header_bits: 40,
            gamma: None,
            p: 0.1,
            tol: 1e-6,
            output_dir: None,
        }
    }
}

fn bad(line: usize, key: &str, value: &str) -> AquilaError {
    AquilaError::Config(format!("line {line}: invalid value '{value}' for '{key}'"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(line, key, value))
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|x| parse_num(line, key, x.trim()))
        .collect()
}

fn optional<T>(value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        f(value).map(Some)
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses and validates config text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AquilaError::Config(format!("line {n}: expected 'key = value'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "problem" => c.problem = ProblemKind::parse(value).ok_or_else(|| bad(n, key, value))?,
                "dim" => c.dim = parse_num(n, key, value)?,
                "cond" => c.cond = parse_num(n, key, value)?,
                "spread" => c.spread = parse_num(n, key, value)?,
                "quadratic_diag" => c.quadratic_diag = optional(value, |v| parse_list(n, key, v))?,
                "classes" => c.classes = parse_num(n, key, value)?,
                "samples" => c.samples = parse_num(n, key, value)?,
                "hidden" => c.hidden = parse_num(n, key, value)?,
                "l2" => c.l2 = parse_num(n, key, value)?,
                "separation" => c.separation = parse_num(n, key, value)?,
                "devices" => c.devices = parse_num(n, key, value)?,
                "rounds" => c.rounds = parse_num(n, key, value)?,
                "alpha" => c.alpha = parse_num(n, key, value)?,
                "beta" => c.beta = parse_num(n, key, value)?,
                "level_policy" => {
                    c.level_policy = value
                        .parse()
                        .map_err(|e: AquilaError| AquilaError::Config(format!("line {n}: {e}")))?
                }
                "partition" => {
                    c.partition = if value == "iid" {
                        PartitionMode::Iid
                    } else if let Some(k) = value.strip_prefix("noniid:") {
                        PartitionMode::NonIid { classes_per_device: parse_num(n, key, k)? }
                    } else {
                        return Err(bad(n, key, value));
                    }
                }
                "hetero_ratios" => c.hetero_ratios = optional(value, |v| parse_list(n, key, v))?,
                "seed" => c.seed = parse_num(n, key, value)?,
                "header_bits" => c.header_bits = parse_num(n, key, value)?,
                "gamma" => c.gamma = optional(value, |v| parse_num(n, key, v))?,
                "p" => c.p = parse_num(n, key, value)?,
                "tol" => c.tol = parse_num(n, key, value)?,
                "output_dir" => c.output_dir = optional(value, |v| Ok(PathBuf::from(v)))?,
                _ => return Err(AquilaError::Config(format!("line {n}: unknown key '{key}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; errors name the path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AquilaError::Config(format!("cannot read config '{}': {e}", path.display())))?;
        RunConfig::parse(&text)
            .map_err(|e| AquilaError::Config(format!("{}: {e}", path.display())))
    }

    /// Writes every key, in a form [`RunConfig::parse`] reads back exactly.
    pub fn to_text(&self) -> String {
        let opt_list = |x: &Option<Vec<f64>>| x.as_deref().map_or("none".to_string(), join);
        let partition = match self.partition {
            PartitionMode::Iid => "iid".to_string(),
            PartitionMode::NonIid { classes_per_device } => format!("noniid:{classes_per_device}"),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("problem", self.problem.as_str().into());
        kv("dim", self.dim.to_string());
        kv("cond", self.cond.to_string());
        kv("spread", self.spread.to_string());
        kv("quadratic_diag", opt_list(&self.quadratic_diag));
        kv("classes", self.classes.to_string());
        kv("samples", self.samples.to_string());
        kv("hidden", self.hidden.to_string());
        kv("l2", self.l2.to_string());
        kv("separation", self.separation.to_string());
        kv("devices", self.devices.to_string());
        kv("rounds", self.rounds.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("level_policy", self.level_policy.to_string());
        kv("partition", partition);
        kv("hetero_ratios", opt_list(&self.hetero_ratios));
        kv("seed", self.seed.to_string());
        kv("header_bits", self.header_bits.to_string());
        kv("gamma", self.gamma.map_or("none".into(), |g| g.to_string()));
        kv("p", self.p.to_string());
        kv("tol", self.tol.to_string());
        kv(
            "output_dir",
            self.output_dir.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
        s
    }

    pub fn hetero(&self) -> Result<Option<HeteroSpec>> {
        self.hetero_ratios.clone().map(HeteroSpec::new).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(AquilaError::Config(msg));
        let positive = |name: &str, x: f64| -> Result<()> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(AquilaError::Config(format!("{name} must be a positive number, got {x}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("p", self.p)?;
        positive("tol", self.tol)?;
        positive("separation", self.separation)?;
        positive("spread", self.spread)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail(format!("l2 must be >= 0, got {}", self.l2));
        }
        if !(self.cond >= 1.0 && self.cond.is_finite()) {
            return fail(format!("cond must be >= 1, got {}", self.cond));
        }
        if self.dim == 0 || self.devices == 0 {
            return fail("dim and devices must be positive".into());
        }
        if let Some(g) = self.gamma {
            if !(g >= 1.0 && g.is_finite()) {
                return fail(format!("gamma must be >= 1, got {g}"));
            }
        }
        if self.header_bits > 1024 {
            return fail(format!("header_bits must be <= 1024, got {}", self.header_bits));
        }
        if let Some(diag) = &self.quadratic_diag {
            if diag.len() != self.dim {
                return fail(format!("quadratic_diag has {} entries, dim is {}", diag.len(), self.dim));
            }
            if diag.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return fail("quadratic_diag entries must be positive".into());
            }
        }
        self.hetero()?;
        if self.problem != ProblemKind::Quadratic {
            if self.classes < 2 {
                return fail(format!("classes must be >= 2, got {}", self.classes));
            }
            if self.samples < self.devices {
                return fail(format!("{} samples cannot cover {} devices", self.samples, self.devices));
            }
            if self.problem == ProblemKind::Mlp && self.hidden == 0 {
                return fail("hidden must be positive".into());
            }
        }
        self.level_policy.validate().map_err(|e| AquilaError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn parses_documented_keys() {
        let c = RunConfig::parse(
            "problem = logistic\ndim = 5\nclasses = 4\nsamples = 80\ndevices = 8\n\
             partition = noniid:2\nlevel_policy = adaquantfl:2\nhetero_ratios = 1,0.5\ngamma = 2\n",
        )
        .unwrap();
        assert_eq!(c.problem, ProblemKind::Logistic);
        assert_eq!(c.partition, PartitionMode::NonIid { classes_per_device: 2 });
        assert_eq!(c.hetero_ratios, Some(vec![1.0, 0.5]));
        assert_eq!(c.gamma, Some(2.0));
        assert_eq!(c.level_policy.to_string(), "adaquantfl:2");
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "alpha = 0",
            "beta = -1",
            "nonsense = 1",
            "dim",
            "level_policy = fixed:40",
            "quadratic_diag = 1,2",
            "hetero_ratios = 0",
            "problem = resnet",
            "gamma = 0.5",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(AquilaError::Config(_))), "{text}");
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = RunConfig::load(Path::new("/no/such/aquila.cfg")).unwrap_err();
        assert!(err.to_string().contains("/no/such/aquila.cfg"));
    }

    fn policy() -> impl Strategy<Value = PolicySpec> {
        prop_oneof![
            Just(PolicySpec::aquila()),
            Just(PolicySpec::full_precision()),
            (1u8..=32).prop_map(PolicySpec::fixed),
            (1u8..=32).prop_map(|b| format!("adaquantfl:{b}").parse().unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn text_round_trip_is_lossless(
            alpha in 1e-6f64..10.0,
            beta in 0.0f64..5.0,
            seed in any::<u64>(),
            diag in proptest::option::of(proptest::collection::vec(0.01f64..100.0, 3)),
            ratios in proptest::option::of(proptest::collection::vec(0.01f64..=1.0, 1..4)),
            gamma in proptest::option::of(1.0f64..50.0),
            policy in policy(),
            k in proptest::option::of(1usize..5),
        ) {
            let c = RunConfig {
                dim: 3,
                alpha,
                beta,
                seed,
                quadratic_diag: diag,
                hetero_ratios: ratios,
                gamma,
                level_policy: policy,
                partition: k.map_or(PartitionMode::Iid, |k| PartitionMode::NonIid { classes_per_device: k }),
                output_dir: Some(PathBuf::from("runs/a b")),
                ..RunConfig::default()
            };
            let back = RunConfig::parse(&c.to_text()).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_text(), c.to_text());
        }
    }
}
