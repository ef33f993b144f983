//! Per-round numeric checks of the convergence analysis.
//!
//! The monitor consumes [`RoundTrace`]s and recomputes every quantity from
//! the raw vectors and the problem itself; it never reads the norms cached in
//! [`crate::fl_core::RoundReport`]. Checks that involve the error-ratio
//! constant `gamma` are stored in a gamma-free form and finalized once the
//! whole run has been seen, because `gamma` is measured as the largest
//! per-round ratio over the run.
//!
//! Every check records `lhs <= rhs + tol`; a violation is flagged, never
//! raised, so a run always yields a complete ledger.

use serde::Serialize;

use crate::numerics::Vector;
use crate::problems::Problem;
use crate::fl_core::RoundTrace;

/// Absolute tolerance on every inequality.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Constants the checks need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSettings {
    pub alpha: f64,
    pub beta: f64,
    /// Smoothness constant of the global objective.
    pub l: f64,
    /// PL constant, known for quadratics only.
    pub mu: Option<f64>,
    /// Optimal value, exact or operational.
    pub f_star: Option<f64>,
    /// Young's-inequality parameter of the all-upload corollary.
    pub p: f64,
    /// Replaces the measured `gamma_max` when set.
    pub gamma_override: Option<f64>,
    /// Hetero aggregation is outside the analysis; all checks are gated.
    pub heterogeneous: bool,
}

/// One round's gamma-independent quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEntry {
    pub round: usize,
    pub num_devices: usize,
    pub skipped: usize,
    /// `f(theta^k)`
    pub loss: f64,
    /// `f(theta^{k+1})`
    pub loss_next: f64,
    /// `||grad f(theta^k)||^2`
    pub grad_sq: f64,
    /// `||theta^{k+1} - theta^k||^2`
    pub step_sq: f64,
    /// `||theta^k - theta^{k-1}||^2`, absent at round 0.
    pub prev_step_sq: Option<f64>,
    /// `||(1/M) sum_m eps_m||^2`
    pub eps_avg_sq: f64,
    /// `||(1/M) sum_{skipped} dq_m||^2`
    pub skipped_dq_avg_sq: f64,
    pub gamma_est: Option<f64>,
    /// Error-ratio assumption holds this round for some finite gamma.
    pub gamma_hypothesis: bool,
    /// Squared distance between the fully-aggregated and actual model.
    pub deviation_lhs: f64,
    /// Proof-final bound with the `6 R^2 d` term.
    pub deviation_rhs: f64,
    /// Statement-line bound with `4 R^2 d + d / 2`; recorded, not asserted.
    pub deviation_rhs_statement: f64,
}

impl BoundEntry {
    pub fn has_skips(&self) -> bool {
        self.skipped > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckStatus {
    Pass,
    Fail,
    ConditionNotMet,
    Vacuous,
}

/// Outcome of one family of checks over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub status: CheckStatus,
    /// Smallest `rhs - lhs` over the evaluated rounds.
    pub worst_margin: Option<f64>,
    pub first_violation_round: Option<usize>,
    pub evaluated: usize,
    pub violations: usize,
    /// Rounds skipped because a per-round hypothesis failed.
    pub hypothesis_failures: usize,
}

impl Certificate {
    fn gated() -> Self {
        Certificate {
            status: CheckStatus::ConditionNotMet,
            worst_margin: None,
            first_violation_round: None,
            evaluated: 0,
            violations: 0,
            hypothesis_failures: 0,
        }
    }

    pub fn is_fail(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

/// Accumulates `(round, lhs, rhs)` triples into a [`Certificate`].
#[derive(Default)]
struct Tally {
    worst: Option<f64>,
    first_violation: Option<usize>,
    evaluated: usize,
    violations: usize,
    hypothesis_failures: usize,
}

impl Tally {
    // Written negated so that a NaN on either side counts as a violation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn check(&mut self, round: usize, lhs: f64, rhs: f64) {
        let margin = rhs - lhs;
        self.evaluated += 1;
        self.worst = Some(self.worst.map_or(margin, |w: f64| w.min(margin)));
        if !(lhs <= rhs + BOUND_TOLERANCE) {
            self.violations += 1;
            self.first_violation.get_or_insert(round);
            log::warn!("bound violated at round {round}: lhs {lhs:e} > rhs {rhs:e}");
        }
    }

    fn finish(self) -> Certificate {
        let status = if self.violations > 0 {
            CheckStatus::Fail
        } else if self.evaluated == 0 {
            if self.hypothesis_failures > 0 {
                CheckStatus::ConditionNotMet
            } else {
                CheckStatus::Vacuous
            }
        } else {
            CheckStatus::Pass
        };
        Certificate {
            status,
            worst_margin: self.worst,
            first_violation_round: self.first_violation,
            evaluated: self.evaluated,
            violations: self.violations,
            hypothesis_failures: self.hypothesis_failures,
        }
    }
}

/// Recorded-only comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordedBound {
    pub rounds: usize,
    pub exceedances: usize,
    pub worst_margin: Option<f64>,
}

/// Run-level summary of every check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificates {
    pub gamma_max: f64,
    pub gamma_used: f64,
    pub l: f64,
    pub mu: Option<f64>,
    pub f_star: Option<f64>,
    pub deviation_bound: Certificate,
    pub deviation_bound_statement_form: RecordedBound,
    pub counterfactual_identity: Certificate,
    pub error_sum_bound: Certificate,
    pub descent: Certificate,
    pub all_upload_descent: Certificate,
    pub pl_condition: Certificate,
    pub pl_linear_rate: Certificate,
    pub nonconvex_rate: Certificate,
}

impl Certificates {
    pub fn any_fail(&self) -> bool {
        [
            &self.deviation_bound,
            &self.counterfactual_identity,
            &self.error_sum_bound,
            &self.descent,
            &self.all_upload_descent,
            &self.pl_condition,
            &self.pl_linear_rate,
            &self.nonconvex_rate,
        ]
        .iter()
        .any(|c| c.is_fail())
    }
}

/// Per-round check inputs plus run-level constants.
#[derive(Debug, Clone)]
pub struct BoundLedger {
    settings: MonitorSettings,
    entries: Vec<BoundEntry>,
}

/// `||(1/M) sum_{m in set} x_m||^2` with the sum in device order.
fn avg_norm_sq<'a>(vectors: impl Iterator<Item = &'a Vector>, m: usize, dim: usize) -> f64 {
    let mut sum = Vector::zeros(dim);
    for x in vectors {
        sum.add_scaled(1.0, x).expect("trace dimensions");
    }
    sum.norm_sq() / (m * m) as f64
}

/// Error ratio `||(1/M) sum_all eps||^2 M^2 / ||sum_skipped eps||^2`.
///
/// `None` when nothing was skipped or the skipped errors cancel.
pub fn estimate_gamma(epsilons: &[Vector], skipped: &[bool]) -> Option<f64> {
    let m = epsilons.len();
    if m == 0 || !skipped.iter().any(|&s| s) {
        return None;
    }
    let dim = epsilons[0].dim();
    let all = avg_norm_sq(epsilons.iter(), m, dim) * (m * m) as f64;
    let omitted = avg_norm_sq(
        epsilons.iter().zip(skipped).filter(|(_, &s)| s).map(|(e, _)| e),
        1,
        dim,
    );
    (omitted > 0.0).then(|| all / omitted)
}

/// Counterfactual model with every device's innovation applied:
/// `theta^k - (alpha / M) sum_m (q_prev_m + dq_m)`.
pub fn fully_aggregated_model(trace: &RoundTrace) -> Vector {
    let m = trace.num_devices();
    let mut sum = Vector::zeros(trace.theta.dim());
    for d in &trace.devices {
        sum.add_scaled(1.0, &d.q_prev_before.add(&d.dq).expect("trace dimensions"))
            .expect("trace dimensions");
    }
    let avg = Vector::from_raw(sum.as_slice().iter().map(|x| x / m as f64).collect());
    trace.theta.axpy(-trace.alpha, &avg).expect("trace dimensions")
}

/// `(lhs, rhs_proof_form, rhs_statement_form)` of the skip-deviation bound.
pub fn deviation_bound(trace: &RoundTrace) -> (f64, f64, f64) {
    let m = trace.num_devices() as f64;
    let skipped: Vec<_> = trace.skipped().collect();
    let lhs = fully_aggregated_model(trace)
        .dist_sq(&trace.theta_next)
        .expect("trace dimensions");
    let big_gamma = trace.alpha * trace.alpha * skipped.len() as f64 / (m * m);
    let mut proof = 0.0;
    let mut statement = 0.0;
    for d in &skipped {
        let dim = d.dim as f64;
        let gap = d.innovation.norm2() - d.tau * d.range * dim.sqrt();
        proof += gap * gap + 6.0 * d.range * d.range * dim;
        statement += gap * gap + 4.0 * d.range * d.range * dim + dim / 2.0;
    }
    (lhs, 4.0 * big_gamma * proof, 4.0 * big_gamma * statement)
}

impl BoundLedger {
    pub fn new(settings: MonitorSettings) -> Self {
        BoundLedger {
            settings,
            entries: Vec::new(),
        }
    }

    pub fn settings(&self) -> &MonitorSettings {
        &self.settings
    }

    pub fn entries(&self) -> &[BoundEntry] {
        &self.entries
    }

    /// Records one round.
    pub fn observe(&mut self, trace: &RoundTrace, problem: &Problem) {
        let m = trace.num_devices();
        let dim = trace.theta.dim();
        let epsilons: Vec<Vector> = trace.devices.iter().map(|d| d.epsilon.clone()).collect();
        let skipped_flags: Vec<bool> = trace.devices.iter().map(|d| !d.uploaded).collect();
        let skipped = skipped_flags.iter().filter(|&&s| s).count();
        let eps_avg_sq = avg_norm_sq(epsilons.iter(), m, dim);
        let gamma_est = estimate_gamma(&epsilons, &skipped_flags);
        let gamma_hypothesis = skipped == 0 || gamma_est.is_some() || eps_avg_sq == 0.0;
        let (deviation_lhs, deviation_rhs, deviation_rhs_statement) = deviation_bound(trace);

        let entry = BoundEntry {
            round: trace.round,
            num_devices: m,
            skipped,
            loss: problem.global_loss(&trace.theta),
            loss_next: problem.global_loss(&trace.theta_next),
            grad_sq: problem.global_gradient(&trace.theta).norm_sq(),
            step_sq: trace.theta_next.dist_sq(&trace.theta).expect("trace dimensions"),
            prev_step_sq: trace
                .theta_prev
                .as_ref()
                .map(|p| trace.theta.dist_sq(p).expect("trace dimensions")),
            eps_avg_sq,
            skipped_dq_avg_sq: avg_norm_sq(trace.skipped().map(|d| &d.dq), m, dim),
            gamma_est,
            gamma_hypothesis,
            deviation_lhs,
            deviation_rhs,
            deviation_rhs_statement,
        };
        self.entries.push(entry);
    }

    /// Largest measured ratio, floored at 1.
    pub fn gamma_max(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.gamma_est)
            .fold(1.0, f64::max)
    }

    pub fn gamma(&self) -> f64 {
        self.settings.gamma_override.unwrap_or_else(|| self.gamma_max())
    }

    /// Rounds where the descent inequality applies: past the bootstrap, with
    /// at least one skipped device.
    fn descent_applies(e: &BoundEntry) -> bool {
        e.prev_step_sq.is_some() && e.has_skips()
    }

    /// `(lhs, rhs)` of the one-step descent inequality.
    pub fn descent(&self, e: &BoundEntry) -> Option<(f64, f64)> {
        if !Self::descent_applies(e) {
            return None;
        }
        let s = &self.settings;
        let a = s.alpha;
        let rhs = -a / 2.0 * e.grad_sq
            + (s.l / 2.0 - 1.0 / (2.0 * a)) * e.step_sq
            + s.beta * self.gamma() / a * e.prev_step_sq.unwrap_or(0.0);
        Some((e.loss_next - e.loss, rhs))
    }

    /// `(lhs, rhs)` of the skipped-innovation plus error bound.
    pub fn error_sum(&self, e: &BoundEntry) -> Option<(f64, f64)> {
        if !Self::descent_applies(e) {
            return None;
        }
        let s = &self.settings;
        let rhs = s.beta * self.gamma() / (s.alpha * s.alpha) * e.prev_step_sq.unwrap_or(0.0);
        Some((e.skipped_dq_avg_sq + e.eps_avg_sq, rhs))
    }

    /// Theorem-level hypothesis for the linear rate under PL.
    pub fn pl_hypothesis(&self) -> bool {
        let s = &self.settings;
        let (Some(mu), Some(_)) = (s.mu, s.f_star) else {
            return false;
        };
        let c = 1.0 / (2.0 * s.alpha) - s.l / 2.0;
        c > 0.0 && s.alpha * mu < 1.0 && s.beta * self.gamma() / s.alpha <= (1.0 - s.alpha * mu) * c
    }

    pub fn nonconvex_hypothesis(&self) -> bool {
        let s = &self.settings;
        s.l / 2.0 - 1.0 / (2.0 * s.alpha) + s.beta * self.gamma() / s.alpha <= 0.0
    }

    /// `(alpha L - 1)(1 + 1/p) + 2 <= 0`
    pub fn all_upload_hypothesis(&self) -> bool {
        let s = &self.settings;
        (s.alpha * s.l - 1.0) * (1.0 + 1.0 / s.p) + 2.0 <= 0.0
    }

    pub fn certificates(&self) -> Certificates {
        let s = &self.settings;
        let gamma_max = self.gamma_max();
        let gamma_used = self.gamma();
        let base = |c: Certificates| c;
        if s.heterogeneous {
            return base(Certificates {
                gamma_max,
                gamma_used,
                l: s.l,
                mu: s.mu,
                f_star: s.f_star,
                deviation_bound: Certificate::gated(),
                deviation_bound_statement_form: RecordedBound { rounds: 0, exceedances: 0, worst_margin: None },
                counterfactual_identity: Certificate::gated(),
                error_sum_bound: Certificate::gated(),
                descent: Certificate::gated(),
                all_upload_descent: Certificate::gated(),
                pl_condition: Certificate::gated(),
                pl_linear_rate: Certificate::gated(),
                nonconvex_rate: Certificate::gated(),
            });
        }

        let mut deviation = Tally::default();
        let mut statement = RecordedBound { rounds: 0, exceedances: 0, worst_margin: None };
        let mut identity = Tally::default();
        let mut error_sum = Tally::default();
        let mut descent = Tally::default();
        let mut all_upload = Tally::default();
        let mut pl = Tally::default();

        for e in &self.entries {
            if e.has_skips() {
                deviation.check(e.round, e.deviation_lhs, e.deviation_rhs);
                statement.rounds += 1;
                let margin = e.deviation_rhs_statement - e.deviation_lhs;
                statement.worst_margin = Some(statement.worst_margin.map_or(margin, |w: f64| w.min(margin)));
                if margin < -BOUND_TOLERANCE {
                    statement.exceedances += 1;
                }
            } else {
                // no skips: the fully-aggregated model is the actual model
                identity.evaluated += 1;
                if e.deviation_lhs != 0.0 {
                    identity.violations += 1;
                    identity.first_violation.get_or_insert(e.round);
                }
                identity.worst = Some(identity.worst.map_or(-e.deviation_lhs, |w: f64| w.min(-e.deviation_lhs)));
            }

            if Self::descent_applies(e) {
                if e.gamma_hypothesis {
                    let (l, r) = self.error_sum(e).expect("applies");
                    error_sum.check(e.round, l, r);
                    let (l, r) = self.descent(e).expect("applies");
                    descent.check(e.round, l, r);
                } else {
                    error_sum.hypothesis_failures += 1;
                    descent.hypothesis_failures += 1;
                }
            } else if e.prev_step_sq.is_some() {
                if self.all_upload_hypothesis() {
                    all_upload.check(e.round, e.loss_next - e.loss, -s.alpha / 2.0 * e.grad_sq);
                } else {
                    all_upload.hypothesis_failures += 1;
                }
            }

            if let (Some(mu), Some(f_star)) = (s.mu, s.f_star) {
                pl.check(e.round, 2.0 * mu * (e.loss - f_star), e.grad_sq);
            }
        }
        let pl_condition = if s.mu.is_some() && s.f_star.is_some() {
            pl.finish()
        } else {
            Certificate::gated()
        };

        Certificates {
            gamma_max,
            gamma_used,
            l: s.l,
            mu: s.mu,
            f_star: s.f_star,
            deviation_bound: deviation.finish(),
            deviation_bound_statement_form: statement,
            counterfactual_identity: identity.finish(),
            error_sum_bound: error_sum.finish(),
            descent: descent.finish(),
            all_upload_descent: all_upload.finish(),
            pl_condition,
            pl_linear_rate: self.pl_linear_rate(),
            nonconvex_rate: self.nonconvex_rate(),
        }
    }

    /// `f(theta^{K+1}) - f* + c ||theta^{K+1} - theta^K||^2 <= (1 - alpha mu)^K w1`
    /// for every `K >= 1`, with `c = 1/(2 alpha) - L/2`.
    fn pl_linear_rate(&self) -> Certificate {
        if !self.pl_hypothesis() || self.entries.is_empty() {
            return Certificate::gated();
        }
        let s = &self.settings;
        let (mu, f_star) = (s.mu.expect("checked"), s.f_star.expect("checked"));
        let c = 1.0 / (2.0 * s.alpha) - s.l / 2.0;
        let first = &self.entries[0];
        let omega = first.loss_next - f_star + c * first.step_sq;
        let rate = 1.0 - s.alpha * mu;
        let mut tally = Tally::default();
        for e in self.entries.iter().skip(1) {
            let k = e.round as i32;
            tally.check(e.round, e.loss_next - f_star + c * e.step_sq, rate.powi(k) * omega);
        }
        tally.finish()
    }

    /// `min_{1<=k<=K} ||grad f(theta^k)||^2 <= 2/(alpha K) (f(theta^1) -
    /// f(theta^{K+1}) + (beta gamma / alpha) ||theta^1 - theta^0||^2)`.
    fn nonconvex_rate(&self) -> Certificate {
        if !self.nonconvex_hypothesis() || self.entries.len() < 2 {
            return Certificate::gated();
        }
        let s = &self.settings;
        let first = &self.entries[0];
        let f1 = first.loss_next;
        let slack = s.beta * self.gamma() / s.alpha * first.step_sq;
        let mut best = f64::INFINITY;
        let mut tally = Tally::default();
        for e in self.entries.iter().skip(1) {
            best = best.min(e.grad_sq);
            let k = e.round as f64;
            tally.check(e.round, best, 2.0 / (s.alpha * k) * (f1 - e.loss_next + slack));
        }
        tally.finish()
    }
}
