//! End-to-end invariants of the simulator, checked against independent
//! recomputation from the round traces.

use std::sync::Arc;

use aquila::fl_core::{self, Simulation, SimulationSettings};
use aquila::policy::PolicySpec;
use aquila::problems::{HeteroSpec, Problem, QuadraticProblem};
use aquila::quantizer::DEFAULT_HEADER_BITS;
use aquila::Vector;

fn quadratic(dim: usize, devices: usize, seed: u64) -> Arc<Problem> {
    Arc::new(Problem::Quadratic(
        QuadraticProblem::random(dim, 4.0, devices, 1.0, seed).unwrap(),
    ))
}

fn simulation(problem: &Arc<Problem>, policy: PolicySpec, beta: f64) -> Simulation {
    let theta0 = problem.initial_point(0);
    Simulation::new(problem.clone(), theta0, SimulationSettings::new(policy, 0.1, beta)).unwrap()
}

fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

#[test]
fn server_average_matches_device_side_average() {
    let problem = quadratic(6, 7, 3);
    for policy in [PolicySpec::aquila(), PolicySpec::fixed(6), "adaquantfl:3".parse().unwrap()] {
        let mut sim = simulation(&problem, policy, 0.25);
        for _ in 0..40 {
            sim.step().unwrap();
            assert!(close(&sim.server().q_avg, &sim.device_side_average(), 1e-12));
        }
    }
}

#[test]
fn lazy_update_equals_gradient_step_minus_skipped_terms() {
    // theta^{k+1} = theta^k - alpha * (q_avg^{k-1} + (1/M) sum_{uploaders} dq_m)
    let problem = quadratic(4, 5, 11);
    let mut sim = simulation(&problem, PolicySpec::fixed(8), 0.5);
    let m = problem.num_devices() as f64;
    let mut q_avg = Vector::zeros(problem.dim());
    for _ in 0..60 {
        let (_, trace) = sim.step().unwrap();
        let mut next_avg = q_avg.clone();
        for d in trace.devices.iter().filter(|d| d.uploaded) {
            next_avg.add_scaled(1.0 / m, &d.dq).unwrap();
        }
        let expected = trace.theta.axpy(-trace.alpha, &next_avg).unwrap();
        assert!(close(&expected, &trace.theta_next, 1e-12), "round {}", trace.round);
        q_avg = next_avg;
    }
}

#[test]
fn every_upload_costs_dim_times_bits_plus_header() {
    let problem = quadratic(9, 6, 5);
    let mut sim = simulation(&problem, PolicySpec::aquila(), 0.25);
    let mut total = 0;
    for _ in 0..30 {
        let (report, _) = sim.step().unwrap();
        for d in &report.devices {
            let expected = if d.uploaded { 9 * u64::from(d.level) + DEFAULT_HEADER_BITS } else { 0 };
            assert_eq!(d.bits, expected);
        }
        total += report.bits();
    }
    let per_device: u64 = sim.devices().iter().map(|d| d.bits_sent).sum();
    assert_eq!(per_device, total);
}

#[test]
fn all_skip_after_bootstrap_gives_a_straight_line() {
    // With an enormous threshold nobody uploads after round 0, so the model
    // moves along the bootstrap direction: theta^k = theta^0 - k alpha q^0.
    let problem = quadratic(5, 4, 2);
    let mut sim = simulation(&problem, PolicySpec::fixed(32), 1e12);
    let theta0 = sim.server().theta.clone();
    let (first, _) = sim.step().unwrap();
    assert_eq!(first.uploads(), 4);
    let q0 = sim.server().q_avg.clone();
    for k in 2..=25 {
        let (report, _) = sim.step().unwrap();
        assert_eq!(report.uploads(), 0);
        let expected = theta0.axpy(-0.1 * k as f64, &q0).unwrap();
        assert!(close(&expected, &sim.server().theta, 1e-10), "k = {k}");
    }
}

#[test]
fn full_precision_without_skips_is_gradient_descent() {
    let problem = quadratic(7, 8, 9);
    let theta0 = problem.initial_point(0);
    let mut sim = simulation(&problem, PolicySpec::full_precision(), 0.0);
    let reports = fl_core::run(&mut sim, 50, |_, _| {}).unwrap();
    assert!(reports.iter().all(|r| r.uploads() == 8));
    let gd = fl_core::gradient_descent(&problem, &theta0, 0.1, 51).unwrap();
    assert!(close(gd.last().unwrap(), &sim.server().theta, 1e-8));
}

#[test]
fn hetero_devices_pay_only_for_their_slice() {
    let problem = quadratic(10, 4, 1);
    let theta0 = problem.initial_point(0);
    let mut settings = SimulationSettings::new(PolicySpec::fixed(4), 0.1, 0.0);
    settings.hetero = Some(HeteroSpec::new(vec![1.0, 0.5]).unwrap());
    let mut sim = Simulation::new(problem.clone(), theta0, settings).unwrap();
    assert_eq!(sim.server().coverage(), &[4, 4, 4, 4, 4, 2, 2, 2, 2, 2]);
    for _ in 0..20 {
        let (report, trace) = sim.step().unwrap();
        for (d, t) in report.devices.iter().zip(&trace.devices) {
            let owned = if d.device_id % 2 == 0 { 10 } else { 5 };
            assert_eq!(t.dim, owned);
            assert_eq!(d.bits, owned as u64 * 4 + DEFAULT_HEADER_BITS);
            if owned == 5 {
                assert!(t.dq.as_slice()[5..].iter().all(|&x| x == 0.0));
            }
        }
        assert!(close(&sim.server().q_avg, &sim.device_side_average(), 1e-12));
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let problem = quadratic(6, 6, 4);
    let a = fl_core::run(&mut simulation(&problem, PolicySpec::aquila(), 0.25), 40, |_, _| {}).unwrap();
    let b = fl_core::run(&mut simulation(&problem, PolicySpec::aquila(), 0.25), 40, |_, _| {}).unwrap();
    assert_eq!(a, b);
}
