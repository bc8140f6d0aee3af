//! Fluid limit of the scaled queue-length process.
//!
//! One self-similar period `[1, theta)` is described by breakpoints
//! `bbar_1 = 1 < bbar_2 < ... < bbar_{N+1} = theta` and corner states
//! `abar_1, ..., abar_{N+1}`. On `[theta^k bbar_i, theta^k bbar_{i+1})` the server
//! is at queue `i` and the trajectory moves linearly from `theta^k abar_i`
//! with velocity `lambda + mu_i p_i`, where `p_i` is row `i` of the routing
//! matrix with `p_ii - 1` on the diagonal. `k` ranges over all integers, so
//! the trajectory oscillates ever faster as `t -> 0`.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::branching::{OffspringMatrices, PerronEigenpair};
use crate::model::{DerivedQuantities, NetworkSpec};

/// Roundoff allowance below zero for corner states, relative to the largest
/// entry of the corner.
pub const CORNER_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error("corner state abar[{corner}][{queue}] = {value} is negative")]
    NegativeCorner { corner: usize, queue: usize, value: f64 },
    #[error("load rho = {0} does not exceed 1")]
    NotOverloaded(f64),
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidSkeleton {
    pub n: usize,
    pub theta: f64,
    /// Time scale tying the normalized and unnormalized skeletons.
    pub alpha: f64,
    /// Normalized breakpoints, `N + 1` entries starting at 1.
    pub bbar: Vec<f64>,
    /// Normalized corner states, `(N + 1) x N`.
    pub abar: Vec<Vec<f64>>,
    /// Unnormalized breakpoints, `b_1 = alpha`.
    pub b: Vec<f64>,
    /// Unnormalized corner states, `a_1 = v`.
    pub a: Vec<Vec<f64>>,
    /// Velocity of the trajectory while the server is at queue `i`.
    pub velocity: Vec<Vec<f64>>,
}

/// Per-queue velocity `lambda + mu_i p_i`.
fn velocities(spec: &NetworkSpec, mu: &[f64]) -> Vec<Vec<f64>> {
    (0..spec.n)
        .map(|i| {
            (0..spec.n)
                .map(|j| {
                    let p = spec.routing[i][j] - if i == j { 1.0 } else { 0.0 };
                    spec.lambda[j] + mu[i] * p
                })
                .collect()
        })
        .collect()
}

/// Forward recursion over one cycle, from a starting scale `b1` and corner
/// `a1`. Shared by the normalized and unnormalized constructions.
fn recurse(
    spec: &NetworkSpec,
    dq: &DerivedQuantities,
    velocity: &[Vec<f64>],
    b1: f64,
    a1: Vec<f64>,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = spec.n;
    let mut b = vec![b1];
    let mut a = vec![a1];
    for i in 0..n {
        // queue i content when the server arrives: initial mass plus
        // arrivals since b_1 plus customers routed in from earlier visits
        let routed_in: f64 = (0..i)
            .map(|j| spec.routing[j][i] * dq.mu[j] * (b[j + 1] - b[j]))
            .sum();
        let at_arrival = a[0][i] + spec.lambda[i] * (b[i] - b[0]) + routed_in;
        let next_b = b[i] + at_arrival * dq.t[i];
        let dt = next_b - b[i];
        let next_a = a[i]
            .iter()
            .zip(&velocity[i])
            .map(|(x, v)| x + v * dt)
            .collect();
        b.push(next_b);
        a.push(next_a);
    }
    (b, a)
}

/// Builds the skeleton from the derived quantities and the eigenpair.
pub fn build_skeleton(
    spec: &NetworkSpec,
    dq: &DerivedQuantities,
    _om: &OffspringMatrices,
    pe: &PerronEigenpair,
) -> Result<FluidSkeleton, FluidError> {
    if dq.rho <= 1.0 {
        return Err(FluidError::NotOverloaded(dq.rho));
    }
    let n = spec.n;
    let vc: f64 = pe.v.iter().zip(&dq.cbar).map(|(v, c)| v * c).sum();
    let alpha = vc / (dq.rho - 1.0);
    let velocity = velocities(spec, &dq.mu);

    let (bbar, mut abar) = recurse(spec, dq, &velocity, 1.0, pe.v.iter().map(|v| v / alpha).collect());
    let (b, mut a) = recurse(spec, dq, &velocity, alpha, pe.v.clone());

    for (c, row) in abar.iter().enumerate() {
        let scale = row.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (q, &x) in row.iter().enumerate() {
            if x < -CORNER_TOL * scale {
                return Err(FluidError::NegativeCorner { corner: c, queue: q, value: x });
            }
        }
    }
    // what is left below zero is roundoff from an empty queue
    for row in abar.iter_mut().chain(a.iter_mut()) {
        for x in row.iter_mut() {
            *x = x.max(0.0);
        }
    }
    debug_assert_eq!(bbar.len(), n + 1);

    Ok(FluidSkeleton {
        n,
        theta: pe.theta,
        alpha,
        bbar,
        abar,
        b,
        a,
        velocity,
    })
}

/// Growth rate of the total fluid population while the server is at each
/// queue: `sum(lambda) - p_i0 mu_i`.
pub fn total_slopes(spec: &NetworkSpec) -> Vec<f64> {
    let arrivals: f64 = spec.lambda.iter().sum();
    (0..spec.n)
        .map(|i| arrivals - spec.exit_prob(i) * spec.mu(i))
        .collect()
}

impl FluidSkeleton {
    /// `(k, i)` with `theta^k bbar_i <= t < theta^k bbar_{i+1}`; `i` is 0-based.
    pub fn locate(&self, t: f64) -> Result<(i32, usize), FluidError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(FluidError::Domain(format!("locate needs t > 0, got {t}")));
        }
        let theta = self.theta;
        let mut k = (t.ln() / theta.ln()).floor() as i32;
        let mut s = t / theta.powi(k);
        // fix floor() landing one period off through roundoff
        while s < 1.0 {
            k -= 1;
            s = t / theta.powi(k);
        }
        while s >= theta {
            k += 1;
            s = t / theta.powi(k);
        }
        let above = self.bbar[..self.n].partition_point(|&b| b <= s);
        Ok((k, above.saturating_sub(1)))
    }

    /// Value of the linear piece `(k, i)` at `t` (also off its interval).
    pub fn segment_value(&self, k: i32, i: usize, t: f64) -> Vec<f64> {
        let scale = self.theta.powi(k);
        let dt = t - scale * self.bbar[i];
        self.abar[i]
            .iter()
            .zip(&self.velocity[i])
            .map(|(a, v)| scale * a + dt * v)
            .collect()
    }

    /// Fluid trajectory at `t >= 0`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        assert!(t >= 0.0, "fluid trajectory is defined for t >= 0, got {t}");
        if t == 0.0 {
            return vec![0.0; self.n];
        }
        let (k, i) = self.locate(t).expect("t > 0");
        self.segment_value(k, i, t)
    }

    /// Average growth rate: the slope `beta` with `int_1^theta beta t dt`
    /// equal to the area under the total population over one period.
    pub fn beta(&self) -> f64 {
        let totals: Vec<f64> = self.abar.iter().map(|a| a.iter().sum()).collect();
        let area: f64 = (0..self.n)
            .map(|i| (totals[i] + totals[i + 1]) * (self.bbar[i + 1] - self.bbar[i]))
            .sum();
        area / (self.theta * self.theta - 1.0)
    }

    /// `xi * X(t / xi)` on the grid.
    pub fn sample_trajectory(&self, xi: f64, grid: &[f64]) -> Result<Vec<(f64, Vec<f64>)>, FluidError> {
        if !(xi >= 1.0 && xi < self.theta) {
            return Err(FluidError::Domain(format!(
                "xi = {xi} outside [1, {})",
                self.theta
            )));
        }
        if let Some(t) = grid.iter().find(|t| !(**t >= 0.0)) {
            return Err(FluidError::Domain(format!("grid time {t} is negative")));
        }
        Ok(grid
            .iter()
            .map(|&t| (t, self.eval(t / xi).into_iter().map(|x| xi * x).collect()))
            .collect())
    }
}

/// Writes `t,x1,...,xN,total` rows with shortest round-trip formatting.
pub fn write_trajectory_csv<W: Write, V: AsRef<[f64]>>(mut w: W, rows: &[(f64, V)]) -> io::Result<()> {
    let n = rows.first().map_or(0, |(_, x)| x.as_ref().len());
    let mut header = String::from("t");
    for j in 1..=n {
        header.push_str(&format!(",x{j}"));
    }
    header.push_str(",total");
    writeln!(w, "{header}")?;
    for (t, x) in rows {
        let x = x.as_ref();
        let mut line = t.to_string();
        for v in x {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push(',');
        line.push_str(&x.iter().sum::<f64>().to_string());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze;
    use crate::model::{reference_network, GatingIndex};
    use approx::assert_abs_diff_eq;

    fn exhaustive() -> (NetworkSpec, crate::Analysis) {
        let spec = reference_network(GatingIndex::Infinite);
        let an = analyze(&spec).unwrap();
        (spec, an)
    }

    #[test]
    fn base_case_and_period() {
        let (_, an) = exhaustive();
        let sk = &an.skeleton;
        assert_eq!(sk.bbar[0], 1.0);
        for j in 0..3 {
            assert_abs_diff_eq!(sk.abar[0][j], an.eigen.v[j] / sk.alpha, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sk.bbar[3] / sk.bbar[0], 3.7497, epsilon = 1e-3);
        assert_abs_diff_eq!(sk.bbar[3], sk.theta, epsilon = 1e-9);
    }

    #[test]
    fn second_corner_is_first_times_m1() {
        let (_, an) = exhaustive();
        let sk = &an.skeleton;
        let m1 = &an.matrices.per_visit[0];
        for j in 0..3 {
            let oracle: f64 = (0..3).map(|l| sk.abar[0][l] * m1[(l, j)]).sum();
            assert_abs_diff_eq!(sk.abar[1][j], oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn locate_examples() {
        let (_, an) = exhaustive();
        let sk = &an.skeleton;
        assert_eq!(sk.locate(1.0).unwrap(), (0, 0));
        assert_eq!(sk.locate(sk.theta).unwrap(), (1, 0));
        let (k, i) = sk.locate(0.5).unwrap();
        assert_eq!(k, -1);
        let s = 0.5 * sk.theta;
        assert!(sk.bbar[i] <= s && s < sk.bbar[i + 1]);
        // s = 1.87485 sits in the third segment of the exhaustive grid
        assert_eq!(i, 2);
        assert!(sk.locate(0.0).is_err());
        assert!(sk.locate(-1.0).is_err());
    }

    #[test]
    fn locate_is_right_continuous_at_breakpoints() {
        let (_, an) = exhaustive();
        let sk = &an.skeleton;
        for i in 0..3 {
            assert_eq!(sk.locate(sk.bbar[i]).unwrap(), (0, i));
        }
    }

    #[test]
    fn eval_endpoints_and_scaling() {
        let (_, an) = exhaustive();
        let sk = &an.skeleton;
        assert_eq!(sk.eval(0.0), vec![0.0; 3]);
        for i in 0..3 {
            assert_eq!(sk.eval(sk.bbar[i]), sk.abar[i]);
        }
        for t in [0.01, 0.3, 1.0, 1.7, 2.9, 11.0] {
            let a = sk.eval(sk.theta * t);
            let b = sk.eval(t);
            for j in 0..3 {
                assert_abs_diff_eq!(a[j], sk.theta * b[j], epsilon = 1e-9 * a[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn reference_slopes() {
        let (spec, an) = exhaustive();
        let slopes = total_slopes(&spec);
        let expect = [-0.6, 0.5, 2.1];
        for i in 0..3 {
            assert_abs_diff_eq!(slopes[i], expect[i], epsilon = 1e-12);
            assert_abs_diff_eq!(an.skeleton.velocity[i].iter().sum::<f64>(), slopes[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn balanced_slopes_vanish() {
        use crate::model::{GatingDistribution, ServiceDistribution};
        let spec = NetworkSpec {
            n: 2,
            lambda: vec![1.0, 1.0],
            service: vec![ServiceDistribution::Exponential { rate: 2.0 }; 2],
            routing: vec![vec![0.0; 2]; 2],
            gating: vec![GatingDistribution::exhaustive(); 2],
        };
        assert_eq!(total_slopes(&spec), vec![0.0, 0.0]);
    }

    #[test]
    fn trajectory_scaling() {
        let (_, an) = exhaustive();
        let sk = &an.skeleton;
        let grid = [0.0, 0.4, 1.0, 2.5, 7.0];
        let plain = sk.sample_trajectory(1.0, &grid).unwrap();
        for (t, x) in &plain {
            assert_eq!(x, &sk.eval(*t));
        }
        let xi = 1.5;
        let scaled = sk.sample_trajectory(xi, &[0.0, xi * sk.bbar[1]]).unwrap();
        assert_eq!(scaled[0].1, vec![0.0; 3]);
        for j in 0..3 {
            assert_abs_diff_eq!(scaled[1].1[j], xi * sk.abar[1][j], epsilon = 1e-12);
        }
        assert!(sk.sample_trajectory(0.9, &grid).is_err());
        assert!(sk.sample_trajectory(sk.theta, &grid).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_trajectory_csv(&mut out, &[(0.0, vec![0.0, 0.0]), (0.5, vec![1.25, 0.1])]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "t,x1,x2,total\n0,0,0,0\n0.5,1.25,0.1,1.35\n");
    }
}
