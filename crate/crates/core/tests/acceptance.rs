//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting, so `cargo test --test acceptance -- --nocapture`
//! doubles as a report.

use std::sync::Arc;
use std::time::Instant;

use aquila::config::{ProblemKind, RunConfig};
use aquila::fl_core::{gradient_descent, run, Simulation, SimulationSettings};
use aquila::policy::{aquila_level, PolicySpec};
use aquila::problems::{PartitionMode, Problem, QuadraticProblem};
use aquila::quantizer::{decode, encode, granularity};
use aquila::theory_monitor::{BoundLedger, CheckStatus, MonitorSettings};
use aquila::{Experiment, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

/// Random vector with a mix of scales, signs and exact zeros; entries stay
/// below `10^max_exp` in magnitude.
fn random_vector(rng: &mut ChaCha8Rng, d: usize, max_exp: f64) -> Vector {
    let scale = 10f64.powf(rng.random_range(-6.0..max_exp));
    let v: Vec<f64> = (0..d)
        .map(|_| if rng.random_bool(0.05) { 0.0 } else { scale * rng.random_range(-1.0..1.0) })
        .collect();
    Vector::new(v).unwrap()
}

/// Quadratic used by the certificate and ablation criteria. At two
/// coordinates the skip rule fires on most rounds under the adaptive level
/// rule, so the skip-round inequalities are exercised rather than vacuous.
fn quadratic_benchmark(beta: f64) -> RunConfig {
    RunConfig {
        problem: ProblemKind::Quadratic,
        dim: 2,
        cond: 2.0,
        spread: 1.0,
        devices: 10,
        rounds: 200,
        alpha: 0.1,
        beta,
        level_policy: PolicySpec::aquila(),
        seed: 0,
        ..RunConfig::default()
    }
}

#[test]
fn criterion_01_quantizer_half_step_bound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..100_000 {
        let d = rng.random_range(1..=256);
        let bits = rng.random_range(1..=32u8);
        // the absolute tolerance presumes O(1) entries: beyond ~1e3 the
        // spacing of f64 values near R alone exceeds 1e-12
        let v = random_vector(&mut rng, d, 1.0);
        let r = v.norm_inf();
        let tau = 1.0 / (2f64.powi(bits as i32) - 1.0);
        let back = decode(&encode(&v, bits).unwrap());
        let err = v.sub(&back).unwrap().norm_inf();
        worst = worst.max(err - tau * r);
        if err > tau * r + 1e-12 {
            failures += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures == 0 && elapsed < 10.0;
    verdict(1, pass, &format!("{failures} violations, worst excess {worst:e}, {elapsed:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_02_level_rule_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut off_by_more = 0;
    let mut below_one = 0;
    let mut cases = 0;
    while cases < 10_000 {
        let d = rng.random_range(1..=256);
        let v = random_vector(&mut rng, d, 6.0);
        if v.is_zero() {
            continue;
        }
        cases += 1;
        let (norm, r, root_d) = (v.norm2(), v.norm_inf(), (d as f64).sqrt());
        let objective = |b: u8| {
            let tau = 1.0 / (2f64.powi(b as i32) - 1.0);
            (norm - tau * r * root_d).powi(2)
        };
        let best = (1..=32u8)
            .min_by(|&a, &b| objective(a).total_cmp(&objective(b)))
            .unwrap();
        let level = aquila_level(&v);
        if level < 1 {
            below_one += 1;
        }
        if (level as i32 - best as i32).abs() > 1 {
            off_by_more += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = off_by_more == 0 && below_one == 0 && elapsed < 10.0;
    verdict(
        2,
        pass,
        &format!("{off_by_more} cases off by more than one level, {below_one} below 1 bit, {elapsed:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_exact_quantization_matches_gradient_descent() {
    let problem = Arc::new(Problem::Quadratic(QuadraticProblem::random(8, 10.0, 8, 1.0, 3).unwrap()));
    let theta0 = Vector::new(vec![0.5; 8]).unwrap();
    let alpha = 0.05;
    let settings = SimulationSettings::new(PolicySpec::fixed(32), alpha, 0.0);
    let mut sim = Simulation::new(problem.clone(), theta0.clone(), settings).unwrap();
    let gd = gradient_descent(&problem, &theta0, alpha, 100).unwrap();
    let mut worst = 0.0f64;
    for target in &gd[1..] {
        sim.step().unwrap();
        let rel = sim.server().theta.dist_sq(target).unwrap().sqrt() / target.norm2();
        worst = worst.max(rel);
    }
    let pass = worst <= 1e-6;
    verdict(3, pass, &format!("worst relative deviation {worst:e} over 100 rounds"));
    assert!(pass);
}

#[test]
fn criterion_04_descent_and_error_sum_certificates() {
    let config = RunConfig { devices: 10, alpha: 0.1, beta: 0.25, rounds: 200, ..quadratic_benchmark(0.25) };
    let outcome = Experiment::build(&config).unwrap().run();
    assert!(outcome.error.is_none());
    let c = &outcome.certificates;
    let pass = c.descent.status == CheckStatus::Pass
        && c.error_sum_bound.status == CheckStatus::Pass
        && c.descent.evaluated > 0;
    verdict(
        4,
        pass,
        &format!(
            "descent {:?} on {} skip rounds ({} violations), error-sum {:?} ({} violations), gamma {:.3e}",
            c.descent.status,
            c.descent.evaluated,
            c.descent.violations,
            c.error_sum_bound.status,
            c.error_sum_bound.violations,
            c.gamma_used
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_pl_linear_rate() {
    let start = Instant::now();
    // Largest candidate threshold whose measured gamma satisfies the rate
    // condition; beta = 0 always does.
    let mut chosen = None;
    for beta in [0.25, 0.1, 0.01, 0.001, 0.0] {
        let config = RunConfig {
            dim: 2,
            quadratic_diag: Some(vec![1.0, 4.0]),
            devices: 4,
            rounds: 300,
            alpha: 0.1,
            beta,
            ..RunConfig::default()
        };
        let exp = Experiment::build(&config).unwrap();
        assert!(exp.constants().certified);
        let outcome = exp.run();
        if outcome.ledger.pl_hypothesis() {
            chosen = Some((beta, outcome));
            break;
        }
    }
    let (beta, outcome) = chosen.expect("beta = 0 satisfies the rate condition");
    let cert = &outcome.certificates.pl_linear_rate;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = cert.status == CheckStatus::Pass && elapsed < 30.0;
    verdict(
        5,
        pass,
        &format!(
            "beta {beta}: {:?}, {} of {} rounds violate, first at {:?}, {elapsed:.2}s",
            cert.status, cert.violations, cert.evaluated, cert.first_violation_round
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_skip_deviation_bound() {
    let outcome = Experiment::build(&quadratic_benchmark(0.25)).unwrap().run();
    let c = &outcome.certificates;
    let pass = c.deviation_bound.status == CheckStatus::Pass
        && c.deviation_bound.evaluated > 0
        && c.counterfactual_identity.status != CheckStatus::Fail;
    verdict(
        6,
        pass,
        &format!(
            "{:?} on {} skip rounds, worst margin {:?}; statement form exceeded on {} rounds",
            c.deviation_bound.status,
            c.deviation_bound.evaluated,
            c.deviation_bound.worst_margin,
            c.deviation_bound_statement_form.exceedances
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_communication_savings() {
    let config = RunConfig {
        problem: ProblemKind::Logistic,
        dim: 10,
        classes: 10,
        samples: 1000,
        devices: 20,
        rounds: 200,
        alpha: 0.1,
        beta: 0.25,
        partition: PartitionMode::NonIid { classes_per_device: 2 },
        seed: 0,
        ..RunConfig::default()
    };
    let exp = Experiment::build(&config).unwrap();
    let f_star = exp.f_star().unwrap();
    let full = exp.run_with(PolicySpec::full_precision(), config.beta);
    let target = 1.01 * (full.final_loss() - f_star);
    let bits = |p: &str| exp.run_with(p.parse().unwrap(), config.beta).bits_to_reach(f_star, target);
    let ours = bits("aquila");
    let baselines: Vec<(&str, Option<u64>)> = ["fixed:8", "adaquantfl:2", "fixed:32-full"]
        .into_iter()
        .map(|p| (p, bits(p)))
        .collect();
    let pass = baselines
        .iter()
        .all(|(_, b)| matches!((ours, b), (Some(a), Some(b)) if a < *b) || (ours.is_some() && b.is_none()));
    verdict(7, pass, &format!("bits to reach gap {target:.3e}: aquila {ours:?}, baselines {baselines:?}"));
    assert!(pass);
}

#[test]
fn criterion_08_beta_endpoints() {
    let run = |beta| Experiment::build(&quadratic_benchmark(beta)).unwrap().run();
    let (b0, b01, b125) = (run(0.0), run(0.1), run(1.25));
    let uploads_ok = b125.uploads_total() <= b0.uploads_total();
    let rel = (b01.final_loss() - b0.final_loss()).abs() / b0.final_loss().abs();
    let pass = uploads_ok && rel <= 0.05;
    verdict(
        8,
        pass,
        &format!(
            "uploads {} (beta 1.25) vs {} (beta 0); final loss {:.6} (beta 0.1) vs {:.6} (beta 0), relative gap {rel:.4}",
            b125.uploads_total(),
            b0.uploads_total(),
            b01.final_loss(),
            b0.final_loss()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_cli_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "problem = logistic\ndim = 4\nclasses = 4\nsamples = 120\ndevices = 6\nrounds = 15\n\
         partition = noniid:2\nalpha = 0.2\nbeta = 0.25\nseed = 7\n",
    )
    .unwrap();
    let outs: Vec<_> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let code = aquila::cli::run_cli(["aquila", "run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    let mut identical = true;
    for file in ["rounds.csv", "summary.json", "certificates.json"] {
        let a = std::fs::read(outs[0].join(file)).unwrap();
        let b = std::fs::read(outs[1].join(file)).unwrap();
        identical &= !a.is_empty() && a == b;
    }
    verdict(9, identical, "rounds.csv, summary.json, certificates.json compared byte for byte");
    assert!(identical);
}

#[test]
fn criterion_10_degenerate_cases() {
    let mut notes = Vec::new();

    // R = 0 encode and decode
    let zero = Vector::zeros(5);
    let q = encode(&zero, 4).unwrap();
    let r_zero_ok = q.range() == 0.0 && decode(&q).is_zero() && granularity(4) > 0.0;
    notes.push(format!("R=0 round trip {r_zero_ok}"));

    // identical devices started at the optimum: every innovation after the
    // bootstrap is zero, so every device skips with 0 bits at level 1
    let centers = vec![Vector::zeros(3); 4];
    let problem = Arc::new(Problem::Quadratic(QuadraticProblem::diagonal(&[1.0, 2.0, 3.0], centers).unwrap()));
    let settings = SimulationSettings::new(PolicySpec::aquila(), 0.1, 0.25);
    let mut sim = Simulation::new(problem.clone(), Vector::zeros(3), settings).unwrap();
    let (l, mu, _) = match &*problem {
        Problem::Quadratic(q) => q.spectrum_bounds(),
        Problem::Classifier(_) => unreachable!(),
    };
    let mut ledger = BoundLedger::new(MonitorSettings {
        alpha: 0.1,
        beta: 0.25,
        l,
        mu: Some(mu),
        f_star: problem.exact_min_loss(),
        p: 0.1,
        gamma_override: None,
        heterogeneous: false,
    });
    let reports = run(&mut sim, 5, |_, t| ledger.observe(t, &problem)).unwrap();
    let skip_ok = reports[1..].iter().all(|r| {
        r.devices.iter().all(|d| !d.uploaded && d.bits == 0 && d.level == 1)
    });
    notes.push(format!("zero-innovation skips {skip_ok}"));
    let all_skip_rounds = ledger.entries().iter().filter(|e| e.skipped == e.num_devices).count();
    let gate = ledger.all_upload_hypothesis();
    let certs = ledger.certificates();
    let certs_ok = !certs.any_fail() && all_skip_rounds == 5;
    notes.push(format!("{all_skip_rounds} all-skip rounds, all-upload gate {gate}, no failing certificate {certs_ok}"));

    let pass = r_zero_ok && skip_ok && certs_ok;
    verdict(10, pass, &notes.join("; "));
    assert!(pass);
}
