//! Mean offspring matrices of the embedded multi-type branching process,
//! its Perron–Frobenius eigenpair, and Monte Carlo extinction estimates.
//!
//! Customers present at the start of a visit to queue `k` are each replaced,
//! by the end of that visit, by an independent random population. `M_k` holds
//! the means of that replacement (rows other than `k` are the identity), and
//! the cycle-level mean matrix is the ordered product `M_1 M_2 ... M_N`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::{DerivedQuantities, NetworkSpec};
use crate::rng::{self, Purpose, SimRng};

pub const RAYLEIGH_TOL: f64 = 1e-12;
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchingError {
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("matrix must be square, nonnegative and nonzero")]
    BadMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringMatrices {
    /// `M_1, ..., M_N`.
    pub per_visit: Vec<DMatrix<f64>>,
    /// `M = M_1 ... M_N`.
    pub mean: DMatrix<f64>,
    /// Visit-offspring means; row `i` is row `i` of `M_i`.
    pub visit: DMatrix<f64>,
    /// Session-offspring means from the backward recursion over queues.
    pub session: DMatrix<f64>,
}

/// Builds the per-visit matrices and their product.
pub fn build_matrices(dq: &DerivedQuantities, spec: &NetworkSpec) -> OffspringMatrices {
    let n = spec.n;
    let visit = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 - dq.f[i]
        } else {
            dq.f[i] * dq.phi[i] * (dq.mu[i] * spec.routing[i][j] + spec.lambda[j])
        }
    });
    let per_visit: Vec<DMatrix<f64>> = (0..n)
        .map(|k| {
            let mut m = DMatrix::<f64>::identity(n, n);
            m.set_row(k, &visit.row(k));
            m
        })
        .collect();
    let mean = per_visit
        .iter()
        .fold(DMatrix::<f64>::identity(n, n), |acc, m| acc * m);

    // m_{N,.} = mcheck_{N,.};  m_{i,j} = mcheck_{i,j} [j <= i] + sum_{k>i} mcheck_{i,k} m_{k,j}
    let mut session = DMatrix::<f64>::zeros(n, n);
    for i in (0..n).rev() {
        for j in 0..n {
            let mut m = if j <= i { visit[(i, j)] } else { 0.0 };
            for k in i + 1..n {
                m += visit[(i, k)] * session[(k, j)];
            }
            session[(i, j)] = m;
        }
    }

    OffspringMatrices {
        per_visit,
        mean,
        visit,
        session,
    }
}

/// Dominant eigenvalue with left (`v`) and right (`u`) eigenvectors,
/// normalized so that `v . u = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronEigenpair {
    pub theta: f64,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
}

impl PerronEigenpair {
    /// Same eigenpair with `v` scaled by `c` and `u` by `1/c`.
    pub fn rescaled(&self, c: f64) -> PerronEigenpair {
        PerronEigenpair {
            theta: self.theta,
            v: self.v.iter().map(|x| x * c).collect(),
            u: self.u.iter().map(|x| x / c).collect(),
            iterations: self.iterations,
        }
    }
}

fn power_iterate(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>, usize), BranchingError> {
    let n = m.nrows();
    let mut x = DVector::<f64>::from_element(n, 1.0);
    let mut prev = f64::NAN;
    for it in 1..=MAX_POWER_ITERATIONS {
        let y = m * &x;
        let q = x.dot(&y) / x.dot(&x);
        let scale = y.amax();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(BranchingError::BadMatrix);
        }
        x = y / scale;
        if (q - prev).abs() < RAYLEIGH_TOL * q.abs().max(1.0) {
            return Ok((q, polish(m, q, x), it));
        }
        prev = q;
    }
    Err(BranchingError::NoConvergence(MAX_POWER_ITERATIONS))
}

/// Inverse iteration with a shift just above `theta`. The Rayleigh stopping
/// rule pins down `theta` long before the vector when the spectral gap is
/// small; two solves remove what is left of the other eigendirections.
fn polish(m: &DMatrix<f64>, theta: f64, x: DVector<f64>) -> DVector<f64> {
    let n = m.nrows();
    let shift = theta * (1.0 + 1e-10);
    let lu = (m - DMatrix::<f64>::identity(n, n) * shift).lu();
    let mut x = x;
    for _ in 0..2 {
        let Some(y) = lu.solve(&x) else { break };
        let k = y.iamax();
        if !(y[k] != 0.0 && y.iter().all(|v| v.is_finite())) {
            break;
        }
        let pivot = y[k];
        x = (y / pivot).map(|v| v.max(0.0));
    }
    x
}

/// Power iteration on `M` (right vector) and `M^T` (left vector).
pub fn perron(m: &DMatrix<f64>) -> Result<PerronEigenpair, BranchingError> {
    if !m.is_square() || m.nrows() == 0 || m.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(BranchingError::BadMatrix);
    }
    let (theta_r, u, it_r) = power_iterate(m)?;
    let (theta_l, v, it_l) = power_iterate(&m.transpose())?;
    let vmax = v.amax();
    let mut v = v / vmax;
    let umax = u.amax();
    let mut u = u / umax;
    let s = v.dot(&u).sqrt();
    v /= s;
    u /= s;
    Ok(PerronEigenpair {
        theta: 0.5 * (theta_r + theta_l),
        v: v.iter().copied().collect(),
        u: u.iter().copied().collect(),
        iterations: it_r.max(it_l),
    })
}

/// Arrival-rate weights that mix the session-offspring laws into the
/// immigration law of the embedded process.
pub fn immigration_weights(spec: &NetworkSpec) -> Vec<f64> {
    let total: f64 = spec.lambda.iter().sum();
    spec.lambda.iter().map(|l| l / total).collect()
}

/// Source of session-offspring draws for the embedded branching process.
pub trait OffspringSampler {
    fn types(&self) -> usize;

    /// One draw of the offspring vector of a single type-`i` individual.
    fn sample_offspring(&self, i: usize, rng: &mut SimRng) -> Vec<u64>;

    /// Next generation of a whole population. The default sums independent
    /// per-individual draws; samplers may override with an equivalent faster
    /// route.
    fn sample_generation(&self, population: &[u64], rng: &mut SimRng) -> Vec<u64> {
        let mut next = vec![0u64; self.types()];
        for (i, &count) in population.iter().enumerate() {
            for _ in 0..count {
                for (acc, x) in next.iter_mut().zip(self.sample_offspring(i, rng)) {
                    *acc += x;
                }
            }
        }
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionOptions {
    pub generations: usize,
    pub truncation: u64,
    pub reps: u64,
    pub seed: u64,
}

impl Default for ExtinctionOptions {
    fn default() -> Self {
        ExtinctionOptions {
            generations: 50,
            truncation: 100_000,
            reps: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionEstimate {
    /// Extinct fraction among conclusive replications.
    pub q_hat: f64,
    pub std_error: f64,
    /// Normal-approximation 95% half-width.
    pub half_width: f64,
    pub extinct: u64,
    pub survived: u64,
    pub inconclusive: u64,
}

/// Runs `opts.reps` independent copies of the branching process started
/// from one type-`i` individual. A copy is extinct when its population hits
/// zero within `opts.generations` generations and survives once the total
/// exceeds `opts.truncation`.
pub fn estimate_extinction<S: OffspringSampler + ?Sized>(
    sampler: &S,
    i: usize,
    opts: &ExtinctionOptions,
) -> ExtinctionEstimate {
    let mut extinct = 0;
    let mut survived = 0;
    let mut inconclusive = 0;
    for rep in 0..opts.reps {
        let mut rng = rng::stream(opts.seed, ((i as u64) << 40) | rep, Purpose::Extinction);
        let mut pop = vec![0u64; sampler.types()];
        pop[i] = 1;
        let mut outcome = None;
        for g in 0..=opts.generations {
            let total: u64 = pop.iter().sum();
            if total == 0 {
                outcome = Some(true);
                break;
            }
            if total > opts.truncation {
                outcome = Some(false);
                break;
            }
            if g == opts.generations {
                break;
            }
            pop = sampler.sample_generation(&pop, &mut rng);
        }
        match outcome {
            Some(true) => extinct += 1,
            Some(false) => survived += 1,
            None => inconclusive += 1,
        }
    }
    let decided = (extinct + survived) as f64;
    let q_hat = if decided > 0.0 { extinct as f64 / decided } else { f64::NAN };
    let std_error = if decided > 0.0 {
        (q_hat * (1.0 - q_hat) / decided).sqrt()
    } else {
        f64::NAN
    };
    ExtinctionEstimate {
        q_hat,
        std_error,
        half_width: 1.96 * std_error,
        extinct,
        survived,
        inconclusive,
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
