//! Random network generation and the cross-module identities every valid
//! overloaded network must satisfy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use overpoll::branching::PerronEigenpair;
use overpoll::fluid::{build_skeleton, total_slopes, FluidSkeleton};
use overpoll::model::{GatingAtom, GatingDistribution, GatingIndex, NetworkSpec, ServiceDistribution};
use overpoll::{analyze, Analysis};

fn random_gating<R: Rng>(rng: &mut R) -> GatingDistribution {
    let index = |rng: &mut R| {
        if rng.random_bool(0.25) {
            GatingIndex::Infinite
        } else {
            GatingIndex::Finite(rng.random_range(1..=6))
        }
    };
    if rng.random_bool(0.6) {
        return GatingDistribution::point(index(rng));
    }
    let atoms = rng.random_range(2..=3);
    let w: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut pmf: Vec<GatingAtom> = w.iter().map(|x| GatingAtom { k: index(rng), p: x / total }).collect();
    // make the weights sum to one exactly
    let head: f64 = pmf[1..].iter().map(|a| a.p).sum();
    pmf[0].p = 1.0 - head;
    GatingDistribution { pmf }
}

fn random_service<R: Rng>(rng: &mut R) -> ServiceDistribution {
    let mean = rng.random_range(0.05..1.5);
    match rng.random_range(0..3) {
        0 => ServiceDistribution::Exponential { rate: 1.0 / mean },
        1 => ServiceDistribution::Deterministic { value: mean },
        _ => {
            let shape = rng.random_range(0.5..4.0);
            ServiceDistribution::Gamma { shape, rate: shape / mean }
        }
    }
}

/// Draws until it finds a network with 2 to 6 queues that passes the
/// structural checks and is overloaded.
pub fn random_spec<R: Rng>(rng: &mut R) -> NetworkSpec {
    loop {
        let n = rng.random_range(2..=6);
        let lambda = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let service = (0..n).map(|_| random_service(rng)).collect();
        let routing = (0..n)
            .map(|_| {
                let exit = rng.random_range(0.05..0.7);
                let w: Vec<f64> = (0..n)
                    .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) })
                    .collect();
                let total: f64 = w.iter().sum();
                if total == 0.0 {
                    vec![0.0; n]
                } else {
                    w.iter().map(|x| x / total * (1.0 - exit)).collect()
                }
            })
            .collect();
        let gating = (0..n).map(|_| random_gating(rng)).collect();
        let spec = NetworkSpec {
            n,
            lambda,
            service,
            routing,
            gating,
        };
        if spec.require_overloaded().is_ok() {
            return spec;
        }
    }
}

/// Largest error of one identity over a network, against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tol
    }
}

/// `|a - b|` measured against `max(1, |b|)`, so absolute for values of order
/// one and relative for large ones.
pub fn scaled_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn max_err(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    pairs.into_iter().map(|(a, b)| scaled_err(a, b)).fold(0.0, f64::max)
}

/// Max-norm distance of two state vectors against `max(1, |b|_inf)`. A
/// queue that is empty while the others hold 1e8 customers only carries
/// roundoff of the others' size.
pub fn vec_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Exact integral of the piecewise-linear total population over
/// `[1, theta]` by trapezoids on a uniform fine grid; piecewise linear
/// pieces make this exact up to the breakpoints falling inside cells.
pub fn total_area_by_quadrature(sk: &FluidSkeleton, cells: usize) -> f64 {
    let h = (sk.theta - 1.0) / cells as f64;
    let total = |t: f64| sk.eval(t).iter().sum::<f64>();
    let mut area = 0.5 * (total(1.0) + total(sk.theta));
    for k in 1..cells {
        area += total(1.0 + k as f64 * h);
    }
    area * h
}

/// Runs every identity on one network.
pub fn identity_checks(spec: &NetworkSpec) -> Result<Vec<Check>, overpoll::Error> {
    let an = analyze(spec)?;
    Ok(checks_for(spec, &an))
}

pub fn checks_for(spec: &NetworkSpec, an: &Analysis) -> Vec<Check> {
    let n = spec.n;
    let dq = &an.derived;
    let sk = &an.skeleton;
    let theta = an.eigen.theta;
    let mut out = Vec::new();

    out.push(Check {
        name: "sum gamma/mu = sum lambda cbar",
        error: scaled_err(dq.rho_gamma.iter().sum(), dq.rho_lc.iter().sum()),
        tol: 1e-10,
    });
    out.push(Check {
        name: "t = f phi",
        error: max_err((0..n).map(|i| (dq.t[i], dq.f[i] * dq.phi[i]))),
        tol: 1e-12,
    });

    let cbar = DVector::from_column_slice(&dq.cbar);
    let id = DMatrix::<f64>::identity(n, n);
    let mut e = 0.0f64;
    for i in 0..n {
        let lhs = (&an.matrices.per_visit[i] - &id) * &cbar;
        for j in 0..n {
            let rhs = if i == j { (dq.rho - 1.0) * dq.t[i] } else { 0.0 };
            e = e.max(scaled_err(lhs[j], rhs));
        }
    }
    out.push(Check {
        name: "(M_i - I) cbar = (rho - 1) t_i e_i",
        error: e,
        tol: 1e-9,
    });
    out.push(Check {
        name: "mcheck_ii = 1 - f_i",
        error: max_err((0..n).map(|i| (an.matrices.visit[(i, i)], 1.0 - dq.f[i]))),
        tol: 0.0,
    });

    let mut e = (sk.bbar[0] - 1.0).abs();
    e = e.max(scaled_err(sk.bbar[n], theta));
    let period: Vec<f64> = sk.abar[0].iter().map(|x| theta * x).collect();
    e = e.max(vec_err(&sk.abar[n], &period));
    for i in 0..n {
        let m = &an.matrices.per_visit[i];
        let oracle: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|l| sk.abar[i][l] * m[(l, j)]).sum())
            .collect();
        e = e.max(vec_err(&sk.abar[i + 1], &oracle));
    }
    out.push(Check {
        name: "skeleton recursion and period",
        error: e,
        tol: 1e-9,
    });

    let mut e = 0.0f64;
    for k in -3..=3 {
        let s = theta.powi(k);
        for i in 0..n {
            let t = s * sk.bbar[i + 1];
            let left = sk.segment_value(k, i, t);
            let right = if i + 1 < n {
                sk.segment_value(k, i + 1, t)
            } else {
                sk.segment_value(k + 1, 0, t)
            };
            e = e.max(vec_err(&left, &right));
        }
    }
    out.push(Check {
        name: "continuity at breakpoints",
        error: e,
        tol: 1e-9,
    });

    let mut e = 0.0f64;
    for k in 0..40 {
        let t = 0.05 * theta.powf(k as f64 / 7.0);
        let a = sk.eval(theta * t);
        let b = sk.eval(t);
        let b: Vec<f64> = b.iter().map(|x| theta * x).collect();
        e = e.max(vec_err(&a, &b));
    }
    out.push(Check {
        name: "self-similarity",
        error: e,
        tol: 1e-9,
    });

    let slopes = total_slopes(spec);
    let mut e = 0.0f64;
    for i in 0..n {
        let dt = sk.bbar[i + 1] - sk.bbar[i];
        if dt > 1e-6 {
            let rise = sk.abar[i + 1].iter().sum::<f64>() - sk.abar[i].iter().sum::<f64>();
            e = e.max(scaled_err(rise / dt, slopes[i]));
        }
    }
    out.push(Check {
        name: "segment slope of total",
        error: e,
        tol: 1e-10,
    });

    let mut e = 0.0f64;
    for c in [0.01, 3.0, 250.0] {
        let pe: PerronEigenpair = an.eigen.rescaled(c);
        match build_skeleton(spec, dq, &an.matrices, &pe) {
            Ok(other) => {
                e = e.max(max_err(sk.bbar.iter().copied().zip(other.bbar.iter().copied())));
                for i in 0..=n {
                    e = e.max(vec_err(&other.abar[i], &sk.abar[i]));
                }
            }
            Err(_) => e = f64::INFINITY,
        }
    }
    out.push(Check {
        name: "invariance under rescaling v",
        error: e,
        tol: 1e-10,
    });

    let area = total_area_by_quadrature(sk, 200_000);
    let beta_area = an.beta * (theta * theta - 1.0) / 2.0;
    out.push(Check {
        name: "beta against trapezoid quadrature",
        error: (beta_area - area).abs() / area.abs(),
        tol: 1e-6,
    });

    let m = &an.matrices.mean;
    let v = DVector::from_column_slice(&an.eigen.v);
    let u = DVector::from_column_slice(&an.eigen.u);
    let left = m.transpose() * &v - &v * theta;
    let right = m * &u - &u * theta;
    out.push(Check {
        name: "Perron residuals and v.u = 1",
        error: (left.amax() / v.amax())
            .max(right.amax() / u.amax())
            .max((v.dot(&u) - 1.0).abs()),
        tol: 1e-9,
    });
    out.push(Check {
        name: "session means = M",
        error: max_err(an.matrices.session.iter().copied().zip(m.iter().copied())),
        tol: 1e-12,
    });
    out
}
