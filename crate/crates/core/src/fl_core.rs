//! The federated round loop: device-side gradient, quantization and skip
//! test, server-side lazy aggregation, and bit accounting.
//!
//! Round 0 is the bootstrap: every device uploads its quantized gradient
//! (with `q_prev = 0`). From round 1 on, each device quantizes its gradient
//! innovation `g - q_prev` and uploads only when the skip test fails; the
//! server reuses the stored `q_prev` of every silent device.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AquilaError, Result};
use crate::numerics::Vector;
use crate::policy::{adaquantfl_level, aquila_level, skip_test, LevelPolicy, PolicySpec, SkipPolicy};
use crate::problems::{CoordinateMask, HeteroSpec, Problem};
use crate::quantizer::{decode, encode, payload_bits_with_header, QuantizedInnovation, DEFAULT_HEADER_BITS};

/// Per-device state kept on the device.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    /// Accumulated dequantized gradient `q_m^{k-1}`, full model dimension.
    pub q_prev: Vector,
    pub mask: Option<CoordinateMask>,
    pub uploads: u64,
    pub bits_sent: u64,
}

impl DeviceState {
    pub fn new(id: usize, dim: usize, mask: Option<CoordinateMask>) -> Self {
        DeviceState {
            id,
            q_prev: Vector::zeros(dim),
            mask,
            uploads: 0,
            bits_sent: 0,
        }
    }

    fn gather(&self, full: &Vector) -> Vector {
        match &self.mask {
            None => full.clone(),
            Some(m) => Vector::from_raw(
                full.as_slice()
                    .iter()
                    .zip(m.as_slice())
                    .filter(|(_, &keep)| keep)
                    .map(|(&x, _)| x)
                    .collect(),
            ),
        }
    }
}

/// Scatters a compact (masked) vector back to the full model dimension.
fn scatter(mask: Option<&CoordinateMask>, compact: &Vector, dim: usize) -> Vector {
    match mask {
        None => compact.clone(),
        Some(m) => {
            let mut out = vec![0.0; dim];
            let mut it = compact.as_slice().iter();
            for (o, &keep) in out.iter_mut().zip(m.as_slice()) {
                if keep {
                    *o = *it.next().expect("mask count matches payload");
                }
            }
            Vector::from_raw(out)
        }
    }
}

/// Server state. The server mirrors every device's `q_prev` (it has seen
/// every increment) and derives the average from the mirrors.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub theta: Vector,
    pub theta_prev: Vector,
    /// Average quantized gradient used for the next step.
    pub q_avg: Vector,
    pub alpha: f64,
    pub round: usize,
    mirrors: Vec<Vector>,
    masks: Vec<Option<CoordinateMask>>,
    /// Number of devices owning each coordinate.
    coverage: Vec<usize>,
}

impl ServerState {
    pub fn new(theta0: Vector, alpha: f64, masks: Vec<Option<CoordinateMask>>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(AquilaError::Policy(format!("alpha must be > 0, got {alpha}")));
        }
        if masks.is_empty() {
            return Err(AquilaError::Config("at least one device is required".into()));
        }
        let d = theta0.dim();
        let mut coverage = vec![0usize; d];
        for mask in &masks {
            for (i, c) in coverage.iter_mut().enumerate() {
                if mask.as_ref().is_none_or(|m| m.contains(i)) {
                    *c += 1;
                }
            }
        }
        Ok(ServerState {
            theta_prev: theta0.clone(),
            q_avg: Vector::zeros(d),
            mirrors: vec![Vector::zeros(d); masks.len()],
            theta: theta0,
            alpha,
            round: 0,
            masks,
            coverage,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.mirrors.len()
    }

    /// Per-coordinate device counts (all `M` without hetero masks).
    pub fn coverage(&self) -> &[usize] {
        &self.coverage
    }

    /// Applies one round of uploads (`payloads[m]` is `None` for a skip):
    /// `theta <- theta - alpha * (q_avg + sum_m dq_m / M)`, then refreshes
    /// `q_avg`. With hetero masks `M` becomes the per-coordinate count.
    pub fn update(&mut self, payloads: &[Option<QuantizedInnovation>]) -> Result<()> {
        if payloads.len() != self.num_devices() {
            return Err(AquilaError::dim(self.num_devices(), payloads.len()));
        }
        let d = self.theta.dim();
        for (m, payload) in payloads.iter().enumerate() {
            let Some(q) = payload else { continue };
            let expected = self.masks[m].as_ref().map_or(d, CoordinateMask::count);
            if q.dim() != expected {
                return Err(AquilaError::dim(expected, q.dim()));
            }
            let dq = scatter(self.masks[m].as_ref(), &decode(q), d);
            self.mirrors[m].add_scaled(1.0, &dq)?;
        }
        let mut sum = Vector::zeros(d);
        for mirror in &self.mirrors {
            sum.add_scaled(1.0, mirror)?;
        }
        let mut q_avg = sum;
        for (x, &c) in q_avg.as_mut_slice().iter_mut().zip(&self.coverage) {
            *x = if c == 0 { 0.0 } else { *x / c as f64 };
        }
        let next = self.theta.axpy(-self.alpha, &q_avg)?;
        next.ensure_finite("global model")?;
        self.q_avg = q_avg;
        self.theta_prev = std::mem::replace(&mut self.theta, next);
        self.round += 1;
        Ok(())
    }
}

/// What a device reports for one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceRecord {
    pub device_id: usize,
    pub uploaded: bool,
    pub bits: u64,
    pub level: u8,
    pub range: f64,
    pub innovation_norm: f64,
    pub eps_norm: f64,
}

/// Raw vectors behind a device's round, kept for independent verification.
/// All vectors have the full model dimension (zero outside a hetero mask).
#[derive(Debug, Clone)]
pub struct DeviceTrace {
    pub uploaded: bool,
    pub innovation: Vector,
    /// Dequantized innovation `dq_m`, computed even when the upload is skipped.
    pub dq: Vector,
    pub epsilon: Vector,
    pub q_prev_before: Vector,
    pub tau: f64,
    pub range: f64,
    /// Number of coordinates the device quantizes (`d`, or the mask size).
    pub dim: usize,
}

pub struct DeviceOutcome {
    pub payload: Option<QuantizedInnovation>,
    pub record: DeviceRecord,
    pub trace: DeviceTrace,
}

/// Inputs the level rule may consult beyond the innovation.
#[derive(Debug, Clone, Copy)]
pub struct LevelContext {
    pub initial_loss: f64,
    pub current_loss: f64,
}

pub fn select_level(policy: LevelPolicy, innovation: &Vector, ctx: &LevelContext) -> Result<u8> {
    match policy {
        LevelPolicy::Aquila => Ok(aquila_level(innovation)),
        LevelPolicy::Fixed(b) => Ok(b),
        LevelPolicy::AdaQuantFl(b0) => adaquantfl_level(ctx.initial_loss, ctx.current_loss, b0),
    }
}

/// One device's work in a round.
///
/// `theta_diff_sq` is `||theta^k - theta^{k-1}||^2`; `None` disables the
/// skip test (bootstrap round, or a non-lazy policy).
#[allow(clippy::too_many_arguments)]
pub fn device_step(
    problem: &Problem,
    dev: &mut DeviceState,
    theta: &Vector,
    theta_diff_sq: Option<f64>,
    policy: &PolicySpec,
    skip: &SkipPolicy,
    ctx: &LevelContext,
    header_bits: u64,
) -> Result<DeviceOutcome> {
    let d = theta.dim();
    if d != dev.q_prev.dim() {
        return Err(AquilaError::dim(dev.q_prev.dim(), d));
    }
    let grad = problem.local_gradient(dev.id, theta, dev.mask.as_ref());
    grad.ensure_finite(&format!("gradient of device {}", dev.id))?;
    let innovation_full = grad.sub(&dev.q_prev)?;
    let innovation = dev.gather(&innovation_full);

    let level = select_level(policy.level, &innovation, ctx)?;
    let q = encode(&innovation, level)?;
    let dq_compact = decode(&q);
    let eps_compact = innovation.sub(&dq_compact)?;
    let dq_sq = dq_compact.norm_sq();
    let eps_sq = eps_compact.norm_sq();

    let skipped = match theta_diff_sq {
        Some(diff) if policy.lazy => skip_test(dq_sq, eps_sq, diff, skip),
        _ => false,
    };

    let dq = scatter(dev.mask.as_ref(), &dq_compact, d);
    let epsilon = scatter(dev.mask.as_ref(), &eps_compact, d);
    let q_prev_before = dev.q_prev.clone();
    let bits = if skipped { 0 } else { payload_bits_with_header(&q, header_bits) };
    if !skipped {
        dev.q_prev.add_scaled(1.0, &dq)?;
        dev.uploads += 1;
        dev.bits_sent += bits;
    }
    let record = DeviceRecord {
        device_id: dev.id,
        uploaded: !skipped,
        bits,
        level,
        range: q.range(),
        innovation_norm: innovation.norm2(),
        eps_norm: eps_sq.sqrt(),
    };
    let trace = DeviceTrace {
        uploaded: !skipped,
        innovation: innovation_full,
        dq,
        epsilon,
        q_prev_before,
        tau: q.tau(),
        range: q.range(),
        dim: innovation.dim(),
    };
    Ok(DeviceOutcome {
        payload: (!skipped).then_some(q),
        record,
        trace,
    })
}

/// Per-round telemetry. Monitor fields are filled in by
/// [`crate::experiment`] once the run's bound ledger is final.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub devices: Vec<DeviceRecord>,
    /// `f(theta^k)`
    pub loss: f64,
    /// `||grad f(theta^k)||_2`
    pub grad_norm: f64,
    /// `||theta^k - theta^{k-1}||_2`, 0 at round 0.
    pub theta_diff_norm: f64,
    pub gamma_est: Option<f64>,
    pub descent_lhs: Option<f64>,
    pub descent_rhs: Option<f64>,
    pub deviation_lhs: Option<f64>,
    pub deviation_rhs: Option<f64>,
}

impl RoundReport {
    pub fn uploads(&self) -> usize {
        self.devices.iter().filter(|d| d.uploaded).count()
    }

    pub fn bits(&self) -> u64 {
        self.devices.iter().map(|d| d.bits).sum()
    }
}

/// Everything needed to re-derive a round from scratch.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    /// `theta^k`
    pub theta: Vector,
    /// `theta^{k-1}`; `None` at the bootstrap round.
    pub theta_prev: Option<Vector>,
    /// `theta^{k+1}` after the server update.
    pub theta_next: Vector,
    pub alpha: f64,
    pub devices: Vec<DeviceTrace>,
}

impl RoundTrace {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn skipped(&self) -> impl Iterator<Item = &DeviceTrace> {
        self.devices.iter().filter(|d| !d.uploaded)
    }
}

/// Simulation settings that do not depend on the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub policy: PolicySpec,
    pub alpha: f64,
    pub beta: f64,
    pub header_bits: u64,
    pub hetero: Option<HeteroSpec>,
}

impl SimulationSettings {
    pub fn new(policy: PolicySpec, alpha: f64, beta: f64) -> Self {
        SimulationSettings {
            policy,
            alpha,
            beta,
            header_bits: DEFAULT_HEADER_BITS,
            hetero: None,
        }
    }
}

/// A federated run in progress.
pub struct Simulation {
    problem: Arc<Problem>,
    devices: Vec<DeviceState>,
    server: ServerState,
    settings: SimulationSettings,
    skip: SkipPolicy,
    initial_loss: f64,
}

impl Simulation {
    pub fn new(problem: Arc<Problem>, theta0: Vector, settings: SimulationSettings) -> Result<Self> {
        settings.policy.validate()?;
        let skip = SkipPolicy::new(settings.beta, settings.alpha)?;
        let d = problem.dim();
        if theta0.dim() != d {
            return Err(AquilaError::dim(d, theta0.dim()));
        }
        theta0.ensure_finite("initial model")?;
        let m = problem.num_devices();
        let masks: Vec<Option<CoordinateMask>> = (0..m)
            .map(|id| {
                settings.hetero.as_ref().and_then(|h| {
                    let r = h.ratio_for(id);
                    (r < 1.0).then(|| problem.submodel_mask(r))
                })
            })
            .collect();
        let devices = masks
            .iter()
            .enumerate()
            .map(|(id, mask)| DeviceState::new(id, d, mask.clone()))
            .collect();
        let initial_loss = problem.global_loss(&theta0);
        let server = ServerState::new(theta0, settings.alpha, masks)?;
        Ok(Simulation {
            problem,
            devices,
            server,
            settings,
            skip,
            initial_loss,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn settings(&self) -> &SimulationSettings {
        &self.settings
    }

    pub fn round(&self) -> usize {
        self.server.round
    }

    /// `(1/M) sum_m q_prev(m)` from the device side, per coordinate count.
    pub fn device_side_average(&self) -> Vector {
        let d = self.problem.dim();
        let mut sum = Vector::zeros(d);
        for dev in &self.devices {
            sum.add_scaled(1.0, &dev.q_prev).expect("dims");
        }
        for (x, &c) in sum.as_mut_slice().iter_mut().zip(self.server.coverage()) {
            *x = if c == 0 { 0.0 } else { *x / c as f64 };
        }
        sum
    }

    /// Runs one round (the bootstrap when `round() == 0`).
    pub fn step(&mut self) -> Result<(RoundReport, RoundTrace)> {
        let round = self.server.round;
        let theta = self.server.theta.clone();
        let bootstrap = round == 0;
        let theta_diff_sq = if bootstrap {
            None
        } else {
            Some(theta.dist_sq(&self.server.theta_prev)?)
        };
        let loss = self.problem.global_loss(&theta);
        if !loss.is_finite() {
            return Err(AquilaError::Numeric(format!("global loss is {loss} at round {round}")));
        }
        let ctx = LevelContext {
            initial_loss: self.initial_loss,
            current_loss: loss,
        };
        let problem = &*self.problem;
        let settings = &self.settings;
        let skip = &self.skip;
        let outcomes: Vec<Result<DeviceOutcome>> = self
            .devices
            .par_iter_mut()
            .map(|dev| {
                device_step(
                    problem,
                    dev,
                    &theta,
                    theta_diff_sq,
                    &settings.policy,
                    skip,
                    &ctx,
                    settings.header_bits,
                )
            })
            .collect();

        let mut payloads = Vec::with_capacity(outcomes.len());
        let mut records = Vec::with_capacity(outcomes.len());
        let mut traces = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            let o = outcome?;
            payloads.push(o.payload);
            records.push(o.record);
            traces.push(o.trace);
        }
        let theta_prev = (!bootstrap).then(|| self.server.theta_prev.clone());
        self.server.update(&payloads)?;

        let report = RoundReport {
            round,
            devices: records,
            loss,
            grad_norm: self.problem.global_gradient(&theta).norm2(),
            theta_diff_norm: theta_diff_sq.map_or(0.0, f64::sqrt),
            gamma_est: None,
            descent_lhs: None,
            descent_rhs: None,
            deviation_lhs: None,
            deviation_rhs: None,
        };
        let trace = RoundTrace {
            round,
            theta,
            theta_prev,
            theta_next: self.server.theta.clone(),
            alpha: self.settings.alpha,
            devices: traces,
        };
        Ok((report, trace))
    }
}

/// Runs the bootstrap plus `rounds` further rounds, handing every trace to
/// `observe`. On error the reports collected so far are returned with it.
pub fn run(
    sim: &mut Simulation,
    rounds: usize,
    mut observe: impl FnMut(&RoundReport, &RoundTrace),
) -> std::result::Result<Vec<RoundReport>, (Vec<RoundReport>, AquilaError)> {
    let mut reports = Vec::with_capacity(rounds + 1);
    while sim.round() <= rounds {
        match sim.step() {
            Ok((report, trace)) => {
                observe(&report, &trace);
                reports.push(report);
            }
            Err(e) => return Err((reports, e)),
        }
    }
    Ok(reports)
}

/// Plain full-precision gradient descent `theta <- theta - alpha grad f`.
/// Returns the trajectory `theta^0 ..= theta^rounds`.
pub fn gradient_descent(problem: &Problem, theta0: &Vector, alpha: f64, rounds: usize) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(rounds + 1);
    let mut theta = theta0.clone();
    out.push(theta.clone());
    for _ in 0..rounds {
        theta = theta.axpy(-alpha, &problem.global_gradient(&theta))?;
        theta.ensure_finite("gradient descent iterate")?;
        out.push(theta.clone());
    }
    Ok(out)
}
