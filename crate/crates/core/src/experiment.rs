//! Builds a problem from a [`RunConfig`] and runs policies on it with the
//! bound ledger attached.

use std::sync::Arc;

use serde::Serialize;

use crate::config::{ProblemKind, RunConfig};
use crate::error::{AquilaError, Result};
use crate::fl_core::{self, gradient_descent, RoundReport, Simulation, SimulationSettings};
use crate::numerics::Vector;
use crate::policy::PolicySpec;
use crate::problems::{
    partition, ClassifierProblem, Dataset, PartitionSpec, Problem, QuadraticProblem, SmoothnessConstants,
};
use crate::theory_monitor::{BoundLedger, Certificates, MonitorSettings};

/// Reference gradient-descent horizon, as a multiple of the run length,
/// used to estimate `f*` when no closed form exists.
pub const F_STAR_HORIZON_FACTOR: usize = 10;

// Independent streams derived from the config seed.
const DATA_STREAM: u64 = 0;
const PARTITION_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id)
}

/// A problem instance ready to be run under any policy.
pub struct Experiment {
    config: RunConfig,
    problem: Arc<Problem>,
    theta0: Vector,
    constants: SmoothnessConstants,
    f_star: Option<f64>,
    f_star_exact: bool,
}

/// Run-level totals written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub status: &'static str,
    pub error: Option<String>,
    pub problem: &'static str,
    pub dim: usize,
    pub devices: usize,
    pub rounds_requested: usize,
    pub rounds_completed: usize,
    pub policy: String,
    pub alpha: f64,
    pub beta: f64,
    pub header_bits: u64,
    pub seed: u64,
    pub total_bits: u64,
    pub uploads_total: u64,
    pub skips_total: u64,
    pub bits_per_device: Vec<u64>,
    pub uploads_per_device: Vec<u64>,
    pub initial_loss: f64,
    /// Loss of the last model the server produced.
    pub final_loss: f64,
    pub f_star: Option<f64>,
    pub f_star_exact: bool,
    pub final_gap: Option<f64>,
    pub rounds_to_tol: Option<usize>,
    pub final_accuracy: Option<f64>,
    pub l: f64,
    pub mu: Option<f64>,
    pub constants_certified: bool,
    pub gamma_max: f64,
    pub gamma_used: f64,
}

/// Everything a single policy run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub policy: PolicySpec,
    pub beta: f64,
    pub reports: Vec<RoundReport>,
    /// `f(theta^0), .., f(theta^{K+1})` (shorter after an abort).
    pub losses: Vec<f64>,
    /// Bits sent before each model in `losses` existed.
    pub cumulative_bits: Vec<u64>,
    pub final_theta: Vector,
    pub ledger: BoundLedger,
    pub certificates: Certificates,
    pub summary: Summary,
    pub error: Option<AquilaError>,
}

impl RunOutcome {
    /// Total bits spent until the optimality gap first drops to `gap`.
    pub fn bits_to_reach(&self, f_star: f64, gap: f64) -> Option<u64> {
        self.losses
            .iter()
            .position(|&f| f - f_star <= gap)
            .map(|k| self.cumulative_bits[k])
    }

    pub fn total_bits(&self) -> u64 {
        self.summary.total_bits
    }

    pub fn uploads_total(&self) -> u64 {
        self.summary.uploads_total
    }

    pub fn final_loss(&self) -> f64 {
        self.summary.final_loss
    }
}

impl Experiment {
    pub fn build(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let problem = build_problem(config)?;
        let theta0 = problem.initial_point(stream(config.seed, INIT_STREAM));
        let constants = problem.smoothness_constants(&theta0);
        let (f_star, f_star_exact) = match problem.exact_min_loss() {
            Some(f) => (Some(f), true),
            None => (Some(reference_min_loss(&problem, &theta0, config)?), false),
        };
        Ok(Experiment {
            config: config.clone(),
            problem: Arc::new(problem),
            theta0,
            constants,
            f_star,
            f_star_exact,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn problem(&self) -> &Arc<Problem> {
        &self.problem
    }

    pub fn initial_point(&self) -> &Vector {
        &self.theta0
    }

    pub fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    /// Runs the configured policy and `beta`.
    pub fn run(&self) -> RunOutcome {
        self.run_with(self.config.level_policy, self.config.beta)
    }

    pub fn run_with(&self, policy: PolicySpec, beta: f64) -> RunOutcome {
        let c = &self.config;
        let hetero = c.hetero().expect("validated config");
        let heterogeneous = hetero.as_ref().is_some_and(|h| h.ratios.iter().any(|&r| r < 1.0));
        let mut ledger = BoundLedger::new(MonitorSettings {
            alpha: c.alpha,
            beta,
            l: self.constants.l,
            mu: self.constants.mu,
            f_star: self.f_star,
            p: c.p,
            gamma_override: c.gamma,
            heterogeneous,
        });
        let settings = SimulationSettings {
            policy,
            alpha: c.alpha,
            beta,
            header_bits: c.header_bits,
            hetero,
        };
        let initial_loss = self.problem.global_loss(&self.theta0);

        let (reports, final_theta, error) = match Simulation::new(self.problem.clone(), self.theta0.clone(), settings) {
            Err(e) => (Vec::new(), self.theta0.clone(), Some(e)),
            Ok(mut sim) => {
                let problem = self.problem.clone();
                let result = fl_core::run(&mut sim, c.rounds, |_, trace| ledger.observe(trace, &problem));
                let theta = sim.server().theta.clone();
                match result {
                    Ok(r) => (r, theta, None),
                    Err((r, e)) => (r, theta, Some(e)),
                }
            }
        };
        let mut reports = reports;
        fill_monitor_fields(&mut reports, &ledger);

        let mut losses: Vec<f64> = reports.iter().map(|r| r.loss).collect();
        let mut cumulative_bits = Vec::with_capacity(reports.len() + 1);
        let mut acc = 0u64;
        for r in &reports {
            cumulative_bits.push(acc);
            acc += r.bits();
        }
        let final_loss = if error.is_none() {
            let f = self.problem.global_loss(&final_theta);
            losses.push(f);
            cumulative_bits.push(acc);
            f
        } else {
            losses.last().copied().unwrap_or(initial_loss)
        };

        let certificates = ledger.certificates();
        let m = self.problem.num_devices();
        let mut bits_per_device = vec![0u64; m];
        let mut uploads_per_device = vec![0u64; m];
        for r in &reports {
            for d in &r.devices {
                bits_per_device[d.device_id] += d.bits;
                uploads_per_device[d.device_id] += u64::from(d.uploaded);
            }
        }
        let uploads_total: u64 = uploads_per_device.iter().sum();
        let rounds_completed = reports.len();
        let final_gap = self.f_star.map(|f| final_loss - f);
        let summary = Summary {
            status: if error.is_none() { "completed" } else { "aborted" },
            error: error.as_ref().map(ToString::to_string),
            problem: self.problem.kind(),
            dim: self.problem.dim(),
            devices: m,
            rounds_requested: c.rounds,
            rounds_completed,
            policy: policy.to_string(),
            alpha: c.alpha,
            beta,
            header_bits: c.header_bits,
            seed: c.seed,
            total_bits: bits_per_device.iter().sum(),
            uploads_total,
            skips_total: (rounds_completed * m) as u64 - uploads_total,
            bits_per_device,
            uploads_per_device,
            initial_loss,
            final_loss,
            f_star: self.f_star,
            f_star_exact: self.f_star_exact,
            final_gap,
            rounds_to_tol: self.f_star.and_then(|f| rounds_to_tol(&reports, f, c.tol)),
            final_accuracy: match &*self.problem {
                Problem::Classifier(p) => Some(p.accuracy(&final_theta)),
                Problem::Quadratic(_) => None,
            },
            l: self.constants.l,
            mu: self.constants.mu,
            constants_certified: self.constants.certified,
            gamma_max: certificates.gamma_max,
            gamma_used: certificates.gamma_used,
        };
        RunOutcome {
            policy,
            beta,
            reports,
            losses,
            cumulative_bits,
            final_theta,
            ledger,
            certificates,
            summary,
            error,
        }
    }
}

/// First round whose model is within `tol` of `f_star`.
pub fn rounds_to_tol(reports: &[RoundReport], f_star: f64, tol: f64) -> Option<usize> {
    reports.iter().find(|r| r.loss - f_star <= tol).map(|r| r.round)
}

fn fill_monitor_fields(reports: &mut [RoundReport], ledger: &BoundLedger) {
    for (r, e) in reports.iter_mut().zip(ledger.entries()) {
        r.gamma_est = e.gamma_est;
        if let Some((lhs, rhs)) = ledger.descent(e) {
            r.descent_lhs = Some(lhs);
            r.descent_rhs = Some(rhs);
        }
        if e.has_skips() {
            r.deviation_lhs = Some(e.deviation_lhs);
            r.deviation_rhs = Some(e.deviation_rhs);
        }
    }
}

/// Builds the problem instance a config describes.
pub fn build_problem(c: &RunConfig) -> Result<Problem> {
    match c.problem {
        ProblemKind::Quadratic => {
            let q = match &c.quadratic_diag {
                Some(diag) => {
                    let centers = gaussian_centers(c.dim, c.devices, c.spread, c.seed)?;
                    QuadraticProblem::diagonal(diag, centers)?
                }
                None => QuadraticProblem::random(c.dim, c.cond, c.devices, c.spread, c.seed)?,
            };
            Ok(Problem::Quadratic(q))
        }
        ProblemKind::Logistic | ProblemKind::Mlp => {
            let (data, shards) = build_dataset(c)?;
            let hidden = (c.problem == ProblemKind::Mlp).then_some(c.hidden);
            Ok(Problem::Classifier(ClassifierProblem::new(Arc::new(data), shards, hidden, c.l2)?))
        }
    }
}

/// The synthetic dataset and its device shards.
pub fn build_dataset(c: &RunConfig) -> Result<(Dataset, Vec<Vec<usize>>)> {
    let data = Dataset::gaussian_clusters(c.samples, c.dim, c.classes, c.separation, stream(c.seed, DATA_STREAM))?;
    let spec = PartitionSpec {
        mode: c.partition,
        num_devices: c.devices,
        seed: stream(c.seed, PARTITION_STREAM),
    };
    let shards = partition(&data, &spec)?;
    Ok((data, shards))
}

fn gaussian_centers(dim: usize, devices: usize, spread: f64, seed: u64) -> Result<Vec<Vector>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..devices)
        .map(|_| {
            Vector::new(
                (0..dim)
                    .map(|_| spread * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect(),
            )
        })
        .collect()
}

/// Smallest loss seen along a long full-precision gradient-descent run.
fn reference_min_loss(problem: &Problem, theta0: &Vector, c: &RunConfig) -> Result<f64> {
    let horizon = F_STAR_HORIZON_FACTOR * c.rounds.max(1);
    let path = gradient_descent(problem, theta0, c.alpha, horizon).map_err(|e| match e {
        AquilaError::Numeric(msg) => AquilaError::Numeric(format!("reference run for the optimum diverged: {msg}")),
        other => other,
    })?;
    Ok(path
        .iter()
        .map(|t| problem.global_loss(t))
        .fold(f64::INFINITY, f64::min))
}
