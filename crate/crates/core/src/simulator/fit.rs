//! Rescaled traces and the fit of `xi * Xbar(t / xi)` to them.

use serde::Serialize;

use super::{SimError, SimTrace};
use crate::fluid::FluidSkeleton;

/// Relative tolerance when matching a scaled time to the record grid.
const GRID_MATCH_TOL: f64 = 1e-12;

/// Golden-section iterations after the grid search.
const GOLDEN_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledTrace {
    pub n: i32,
    pub theta: f64,
    pub grid: Vec<f64>,
    /// `X(theta^n t) / theta^n` at each grid time.
    pub values: Vec<Vec<f64>>,
}

/// Rescales a recorded path. Every `theta^n t` must be a record time.
pub fn scaled(trace: &SimTrace, theta: f64, n: i32, grid: &[f64]) -> Result<ScaledTrace, SimError> {
    let s = theta.powi(n);
    let mut values = Vec::with_capacity(grid.len());
    for &t in grid {
        let target = s * t;
        if target > trace.horizon * (1.0 + GRID_MATCH_TOL) {
            return Err(SimError::InsufficientHorizon {
                needed: target,
                horizon: trace.horizon,
            });
        }
        let k = trace.grid.partition_point(|&g| g < target * (1.0 - GRID_MATCH_TOL));
        let hit = trace
            .grid
            .get(k)
            .filter(|&&g| (g - target).abs() <= GRID_MATCH_TOL * g.abs().max(target.abs()));
        if hit.is_none() {
            return Err(SimError::OffGrid(target));
        }
        values.push(trace.queue_path[k].iter().map(|&x| x as f64 / s).collect());
    }
    Ok(ScaledTrace {
        n,
        theta,
        grid: grid.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiFit {
    pub xi: f64,
    pub error: f64,
}

/// Relative sup-distance between the scaled trace and `xi * Xbar(t / xi)`:
/// the per-queue sup distances summed over queues, divided by the summed
/// per-queue sups of the trace.
pub fn fit_distance(sc: &ScaledTrace, sk: &FluidSkeleton, xi: f64) -> f64 {
    let n = sk.n;
    let mut diff = vec![0.0f64; n];
    let mut size = vec![0.0f64; n];
    for (t, y) in sc.grid.iter().zip(&sc.values) {
        let f = sk.eval(t / xi);
        for j in 0..n {
            diff[j] = diff[j].max((y[j] - xi * f[j]).abs());
            size[j] = size[j].max(y[j].abs());
        }
    }
    diff.iter().sum::<f64>() / size.iter().sum::<f64>()
}

/// Least-distance `xi` in `[1, theta)`: a grid search at resolution
/// `1e-3 (theta - 1)` refined by golden section around the best grid point.
pub fn estimate_xi(sc: &ScaledTrace, sk: &FluidSkeleton) -> Result<XiFit, SimError> {
    if sc.grid.is_empty() || sc.values.iter().all(|v| v.iter().all(|&x| x == 0.0)) {
        return Err(SimError::TraceTooShort);
    }
    let theta = sk.theta;
    let h = 1e-3 * (theta - 1.0);
    let d = |xi: f64| fit_distance(sc, sk, xi);

    let mut best = XiFit { xi: 1.0, error: d(1.0) };
    for k in 1..1000 {
        let xi = 1.0 + k as f64 * h;
        let e = d(xi);
        if e < best.error {
            best = XiFit { xi, error: e };
        }
    }

    let hi_cap = theta - 1e-9 * h;
    let (mut a, mut b) = ((best.xi - h).max(1.0), (best.xi + h).min(hi_cap));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut e = a + r * (b - a);
    let (mut fc, mut fe) = (d(c), d(e));
    for _ in 0..GOLDEN_STEPS {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - r * (b - a);
            fc = d(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + r * (b - a);
            fe = d(e);
        }
    }
    for (xi, err) in [(c, fc), (e, fe)] {
        if err < best.error {
            best = XiFit { xi, error: err };
        }
    }
    Ok(best)
}

/// 1-based index of the first cycle instant at or after `theta^n`.
pub fn eta(cycle_instants: &[f64], theta: f64, n: i32) -> Option<usize> {
    let target = theta.powi(n);
    let k = cycle_instants.partition_point(|&t| t < target);
    (k < cycle_instants.len()).then_some(k + 1)
}
