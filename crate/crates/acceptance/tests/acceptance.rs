//! Acceptance criteria for the three-queue reference network and for random
//! networks. Prints one verdict line per criterion with the supporting
//! numbers indented below it, and exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use overpoll::analyze;
use overpoll::branching::{estimate_extinction, ExtinctionOptions};
use overpoll::model::{reference_network, GatingIndex, NetworkSpec};
use overpoll::optimizer::{candidate_set, exhaustive_search};
use overpoll::simulator::{
    estimate_xi, run, scaled, session_offspring_mc, visit_offspring_mc, visit_time_mc, CycleSampler, SimConfig,
};
use overpoll_suite::{identity_checks, random_spec};

use GatingIndex::{Finite, Infinite};

const SEED: u64 = 1;

struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            passed: true,
            details: Vec::new(),
        }
    }

    /// Records one sub-check.
    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn close(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        let ok = (got - want).abs() <= tol;
        self.check(ok, format!("{label} = {got:.6} (target {want}, tol {tol:e})"));
    }
}

fn exhaustive() -> NetworkSpec {
    reference_network(Infinite)
}

fn gated() -> NetworkSpec {
    reference_network(Finite(1))
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let dq = analyze(&exhaustive()).unwrap().derived;
    for (i, want) in [0.4749, 0.5194, 0.8625].into_iter().enumerate() {
        o.close(&format!("lambda_{} cbar_{}", i + 1, i + 1), dq.rho_lc[i], want, 5e-4);
    }
    o.close("rho", dq.rho, 1.8568, 5e-4);
    o
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    for (name, spec, theta, dir) in [
        ("exhaustive", exhaustive(), 3.7497, [1.0, 0.7019, 0.0]),
        ("gated", gated(), 1.6394, [1.0, 0.7112, 0.6405]),
    ] {
        let pe = analyze(&spec).unwrap().eigen;
        o.close(&format!("{name} theta"), pe.theta, theta, 5e-4);
        for j in 1..3 {
            o.close(&format!("{name} v_{}/v_1", j + 1), pe.v[j] / pe.v[0], dir[j], 1e-2);
        }
    }
    o
}

fn criterion_3() -> Outcome {
    let mut o = Outcome::new();
    o.close("beta exhaustive", analyze(&exhaustive()).unwrap().beta, 1.5025, 1e-3);
    o.close("beta gated", analyze(&gated()).unwrap().beta, 1.2416, 1e-3);
    let start = Instant::now();
    let r = exhaustive_search(&exhaustive(), &vec![candidate_set(32); 3]).unwrap();
    let took = start.elapsed();
    let shown: Vec<String> = r.best.iter().map(|k| k.to_string()).collect();
    o.check(
        r.best == vec![Infinite, Infinite, Finite(1)],
        format!("optimizer argmin = ({}) over {} assignments", shown.join(", "), r.evaluations),
    );
    o.close("optimal beta", r.best_beta, 1.19262, 1e-3);
    o.check(took < Duration::from_secs(60), format!("exhaustive search took {took:.2?}"));
    o
}

fn criterion_4() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let specs: Vec<NetworkSpec> = (0..200).map(|_| random_spec(&mut rng)).collect();
    let mut worst: Vec<(&'static str, f64, f64)> = Vec::new();
    let mut failures = 0;
    for spec in &specs {
        match identity_checks(spec) {
            Ok(checks) => {
                for c in checks {
                    if !c.passed() {
                        failures += 1;
                    }
                    match worst.iter_mut().find(|w| w.0 == c.name) {
                        Some(w) => w.1 = w.1.max(c.error),
                        None => worst.push((c.name, c.error, c.tol)),
                    }
                }
            }
            Err(e) => {
                failures += 1;
                o.check(false, format!("pipeline failed: {e}"));
            }
        }
    }
    let sizes: Vec<usize> = (2..=6).map(|n| specs.iter().filter(|s| s.n == n).count()).collect();
    o.check(true, format!("{} random networks, counts for N = 2..6: {sizes:?}", specs.len()));
    for (name, err, tol) in worst {
        o.check(err <= tol, format!("{name}: worst error {err:.2e} (tol {tol:e})"));
    }
    o.check(failures == 0, format!("{failures} failed checks"));
    o
}

/// `|mean - target| / se`; a sample with no spread that hits the target
/// exactly scores 0.
fn z_score(mean: f64, target: f64, se: f64) -> f64 {
    let d = (mean - target).abs();
    if d == 0.0 {
        0.0
    } else {
        d / se
    }
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let reps = 100_000;
    for (name, spec) in [("exhaustive", exhaustive()), ("gated", gated())] {
        let an = analyze(&spec).unwrap();
        for i in 0..3 {
            let t = visit_time_mc(&spec, i, reps, SEED);
            let want = an.derived.t[i];
            o.check(
                t.contains(want),
                format!(
                    "{name} Q{} visit time {:.5} +- {:.5} contains t = {want:.5}",
                    i + 1,
                    t.mean,
                    t.half_width
                ),
            );

            let s = session_offspring_mc(&spec, i, reps, SEED);
            let worst = (0..3)
                .map(|j| z_score(s.mean[j], an.matrices.session[(i, j)], s.std_error[j]))
                .fold(0.0, f64::max);
            o.check(
                worst <= 3.0,
                format!("{name} Q{} session offspring {:.4?}, worst |z| = {worst:.2}", i + 1, s.mean),
            );

            let v = visit_offspring_mc(&spec, i, reps, SEED);
            let left = 1.0 - an.derived.f[i];
            let z = z_score(v.mean[i], left, v.std_error[i]);
            o.check(
                z <= 3.0,
                format!("{name} Q{} left after one visit {:.5} vs 1 - f = {left:.5}, |z| = {z:.2}", i + 1, v.mean[i]),
            );
        }
    }
    o
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let spec = exhaustive();
    let an = analyze(&spec).unwrap();
    let theta = an.eigen.theta;
    let window: Vec<f64> = (0..=450).map(|k| 0.5 + 0.01 * k as f64).collect();
    let (lo, hi) = (2, 8);
    let mut errs = [Vec::new(), Vec::new()];
    let mut in_range = true;
    for rep in 0..20 {
        let mut grid: Vec<f64> = [lo, hi]
            .iter()
            .flat_map(|&n| window.iter().map(move |t| theta.powi(n) * t))
            .collect();
        grid.sort_by(f64::total_cmp);
        let mut cfg = SimConfig::new(SEED, *grid.last().unwrap(), grid);
        cfg.replication = rep;
        let tr = run(&spec, &cfg).unwrap();
        for (slot, n) in [lo, hi].into_iter().enumerate() {
            let sc = scaled(&tr, theta, n, &window).unwrap();
            match estimate_xi(&sc, &an.skeleton) {
                Ok(fit) => {
                    in_range &= fit.xi >= 1.0 && fit.xi < theta;
                    errs[slot].push(fit.error);
                }
                Err(e) => {
                    in_range = false;
                    o.check(false, format!("n = {n} replication {rep}: {e}"));
                }
            }
        }
    }
    let m_lo = median(errs[0].clone());
    let m_hi = median(errs[1].clone());
    o.check(
        m_hi < m_lo,
        format!("median fit distance n = {hi}: {m_hi:.4} < n = {lo}: {m_lo:.4}"),
    );
    o.check(in_range, "every xi estimate lies in [1, theta)".to_string());
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    for (name, spec) in [("exhaustive", exhaustive()), ("gated", gated())] {
        let sampler = CycleSampler::new(&spec);
        let opts = ExtinctionOptions {
            seed: SEED,
            ..ExtinctionOptions::default()
        };
        for i in 0..3 {
            let e = estimate_extinction(&sampler, i, &opts);
            o.check(
                e.q_hat + 3.0 * e.std_error < 1.0,
                format!(
                    "{name} q_{} = {:.4} (se {:.4}; {} extinct, {} survived, {} inconclusive)",
                    i + 1,
                    e.q_hat,
                    e.std_error,
                    e.extinct,
                    e.survived,
                    e.inconclusive
                ),
            );
        }
    }
    let took = start.elapsed();
    o.check(took < Duration::from_secs(60), format!("took {took:.2?}"));
    o
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("derived quantities", criterion_1),
        ("Perron eigenvalues and left eigenvectors", criterion_2),
        ("growth rates and optimal gating", criterion_3),
        ("identity suite on random networks", criterion_4),
        ("simulation against analytic means", criterion_5),
        ("fluid convergence of scaled paths", criterion_6),
        ("extinction probabilities below one", criterion_7),
    ];
    let mut failed = 0;
    for (k, (title, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        println!(
            "criterion {}: {} {title} ({took:.2?})",
            k + 1,
            if out.passed { "PASS" } else { "FAIL" }
        );
        for d in &out.details {
            println!("    {d}");
        }
        if !out.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
