//! Network specification, validation and the closed-form quantities that
//! every downstream analysis is built from.
//!
//! A network has `N >= 2` queues visited cyclically by one server. Queue `i`
//! receives Poisson arrivals at rate `lambda[i]`, serves customers with i.i.d.
//! times drawn from `service[i]`, and routes each completion to queue `j`
//! with probability `routing[i][j]` (or out of the system with the remaining
//! mass). Each visit to queue `i` closes its gate a random number of times
//! drawn from `gating[i]`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on the residual of the two traffic systems.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Tolerance on probability masses summing to one.
pub const PMF_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field}: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("no exit probability: every customer is rerouted forever")]
    NoExit,
    #[error("routing matrix not substochastic-convergent")]
    SingularRouting,
    #[error("not overloaded (rho = {rho})")]
    NotOverloaded { rho: f64 },
    #[error("queue {queue}: lambda/mu + p_ii = {value} must be < 1")]
    UnstableVisit { queue: usize, value: f64 },
}

impl ModelError {
    fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Service time law of one queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum ServiceDistribution {
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl ServiceDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDistribution::Exponential { rate } => 1.0 / rate,
            ServiceDistribution::Deterministic { value } => value,
            ServiceDistribution::Gamma { shape, rate } => shape / rate,
        }
    }

    /// Service rate `1 / E B`.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    fn check(&self, field: &str) -> Result<(), ModelError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        let valid = match *self {
            ServiceDistribution::Exponential { rate } => ok(rate),
            ServiceDistribution::Deterministic { value } => ok(value),
            ServiceDistribution::Gamma { shape, rate } => ok(shape) && ok(rate),
        };
        if valid {
            Ok(())
        } else {
            Err(ModelError::field(field, "parameters must be finite and positive"))
        }
    }

    /// Draws one service time. Exponential times use inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceDistribution::Exponential { rate } => exp_inverse(rate, rng),
            ServiceDistribution::Deterministic { value } => value,
            ServiceDistribution::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma parameters")
                .sample(rng),
        }
    }

    /// Draws the sum of `count` independent service times in one shot.
    pub fn sample_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> f64 {
        if count == 0 {
            return 0.0;
        }
        let c = count as f64;
        match *self {
            ServiceDistribution::Exponential { rate } => {
                if count == 1 {
                    exp_inverse(rate, rng)
                } else {
                    Gamma::new(c, 1.0 / rate).expect("positive shape").sample(rng)
                }
            }
            ServiceDistribution::Deterministic { value } => c * value,
            ServiceDistribution::Gamma { shape, rate } => Gamma::new(c * shape, 1.0 / rate)
                .expect("positive shape")
                .sample(rng),
        }
    }
}

/// Exponential variate by inversion of the distribution function.
pub(crate) fn exp_inverse<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Number of gate closures in one visit; `Infinite` is exhaustive service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GatingIndex {
    Finite(u32),
    Infinite,
}

impl GatingIndex {
    /// `x^k`, with `x^inf = 0` for `0 <= x < 1`.
    pub fn power(self, x: f64) -> f64 {
        match self {
            GatingIndex::Finite(k) => x.powi(k as i32),
            GatingIndex::Infinite => 0.0,
        }
    }

    pub fn stages(self) -> u64 {
        match self {
            GatingIndex::Finite(k) => u64::from(k),
            GatingIndex::Infinite => u64::MAX,
        }
    }
}

impl fmt::Display for GatingIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatingIndex::Finite(k) => write!(f, "{k}"),
            GatingIndex::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for GatingIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            GatingIndex::Finite(k) => serializer.serialize_u32(*k),
            GatingIndex::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for GatingIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct IndexVisitor;

        impl Visitor<'_> for IndexVisitor {
            type Value = GatingIndex;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"inf\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<GatingIndex, E> {
                match u32::try_from(v) {
                    Ok(k) if k >= 1 => Ok(GatingIndex::Finite(k)),
                    _ => Err(E::custom(format!("gating index {v} out of range 1..=u32::MAX"))),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<GatingIndex, E> {
                if v < 1 {
                    return Err(E::custom(format!("gating index {v} must be >= 1")));
                }
                self.visit_u64(v as u64)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<GatingIndex, E> {
                if v.is_infinite() && v > 0.0 {
                    Ok(GatingIndex::Infinite)
                } else if v.fract() == 0.0 && v >= 1.0 {
                    self.visit_u64(v as u64)
                } else {
                    Err(E::custom(format!("gating index {v} is not a positive integer")))
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<GatingIndex, E> {
                match v {
                    "inf" | "infinity" | "Infinity" | "exhaustive" => Ok(GatingIndex::Infinite),
                    other => other
                        .parse::<u64>()
                        .map_err(|_| E::custom(format!("unrecognised gating index {other:?}")))
                        .and_then(|k| self.visit_u64(k)),
                }
            }
        }

        deserializer.deserialize_any(IndexVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingAtom {
    pub k: GatingIndex,
    pub p: f64,
}

/// Law of the gating index of one queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingDistribution {
    pub pmf: Vec<GatingAtom>,
}

impl GatingDistribution {
    pub fn point(k: GatingIndex) -> Self {
        GatingDistribution {
            pmf: vec![GatingAtom { k, p: 1.0 }],
        }
    }

    pub fn exhaustive() -> Self {
        Self::point(GatingIndex::Infinite)
    }

    pub fn gated() -> Self {
        Self::point(GatingIndex::Finite(1))
    }

    /// `E[x^kappa]` with the infinite atom contributing zero.
    pub fn expected_power(&self, x: f64) -> f64 {
        self.pmf.iter().map(|a| a.p * a.k.power(x)).sum()
    }

    /// The index if the law is a point mass.
    pub fn as_point(&self) -> Option<GatingIndex> {
        let mut positive = self.pmf.iter().filter(|a| a.p > 0.0);
        match (positive.next(), positive.next()) {
            (Some(a), None) => Some(a.k),
            _ => None,
        }
    }

    pub fn is_exhaustive(&self) -> bool {
        self.as_point() == Some(GatingIndex::Infinite)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GatingIndex {
        if let Some(k) = self.as_point() {
            return k;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = self.pmf[0].k;
        for atom in &self.pmf {
            if atom.p <= 0.0 {
                continue;
            }
            acc += atom.p;
            last = atom.k;
            if u < acc {
                return atom.k;
            }
        }
        last
    }

    fn check(&self, field: &str) -> Result<(), ModelError> {
        if self.pmf.is_empty() {
            return Err(ModelError::field(field, "pmf is empty"));
        }
        if self.pmf.iter().any(|a| !(a.p.is_finite() && a.p >= 0.0)) {
            return Err(ModelError::field(field, "weights must be nonnegative"));
        }
        if !self.pmf.iter().any(|a| a.p > 0.0) {
            return Err(ModelError::field(field, "no atom has positive weight"));
        }
        let total: f64 = self.pmf.iter().map(|a| a.p).sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(ModelError::field(field, format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Full parameterization of a polling network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n: usize,
    pub lambda: Vec<f64>,
    pub service: Vec<ServiceDistribution>,
    pub routing: Vec<Vec<f64>>,
    pub gating: Vec<GatingDistribution>,
}

/// Outcome of [`NetworkSpec::validate`]: hard errors stop any analysis,
/// warnings are informational.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    /// Kind of the first hard error, when there is one.
    #[serde(skip)]
    pub first_error: Option<ModelError>,
    pub rho: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_overloaded(&self) -> bool {
        self.rho.is_some_and(|r| r > 1.0)
    }

    fn push_error(&mut self, e: ModelError) {
        self.errors.push(e.to_string());
        if self.first_error.is_none() {
            self.first_error = Some(e);
        }
    }
}

impl NetworkSpec {
    /// Spec with the same arrivals, services and routing but deterministic
    /// gating indexes.
    pub fn with_gating(&self, kappa: &[GatingIndex]) -> NetworkSpec {
        NetworkSpec {
            gating: kappa.iter().map(|&k| GatingDistribution::point(k)).collect(),
            ..self.clone()
        }
    }

    pub fn mu(&self, i: usize) -> f64 {
        self.service[i].rate()
    }

    pub fn exit_prob(&self, i: usize) -> f64 {
        1.0 - self.routing[i].iter().sum::<f64>()
    }

    /// `lambda_i / mu_i + p_ii`, the mean number of customers a single
    /// service at queue `i` leaves behind its gate.
    pub fn self_feed(&self, i: usize) -> f64 {
        self.lambda[i] / self.mu(i) + self.routing[i][i]
    }

    /// Structural checks: dimensions, positivity, probabilities, the exit
    /// condition and finiteness of the visit moments. Does not require
    /// overload, so the simulator accepts any spec passing this.
    pub fn check(&self) -> Result<(), ModelError> {
        let n = self.n;
        if n < 2 {
            return Err(ModelError::field("n", "need at least 2 queues"));
        }
        if self.lambda.len() != n {
            return Err(ModelError::field("lambda", format!("expected {n} entries, got {}", self.lambda.len())));
        }
        if self.service.len() != n {
            return Err(ModelError::field("service", format!("expected {n} entries, got {}", self.service.len())));
        }
        if self.gating.len() != n {
            return Err(ModelError::field("gating", format!("expected {n} entries, got {}", self.gating.len())));
        }
        if self.routing.len() != n {
            return Err(ModelError::field("routing", format!("expected {n} rows, got {}", self.routing.len())));
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(ModelError::field(format!("lambda[{i}]"), "must be finite and positive"));
            }
        }
        for (i, s) in self.service.iter().enumerate() {
            s.check(&format!("service[{i}]"))?;
        }
        for (i, row) in self.routing.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::field(format!("routing[{i}]"), format!("expected {n} entries, got {}", row.len())));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(ModelError::field(format!("routing[{i}]"), "probabilities must be nonnegative"));
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + PMF_TOL {
                return Err(ModelError::field(format!("routing[{i}]"), format!("row sums to {s} > 1")));
            }
        }
        for (i, g) in self.gating.iter().enumerate() {
            g.check(&format!("gating[{i}]"))?;
        }
        if (0..n).map(|i| self.exit_prob(i).max(0.0)).sum::<f64>() <= 0.0 {
            return Err(ModelError::NoExit);
        }
        for i in 0..n {
            let x = self.self_feed(i);
            if x >= 1.0 {
                return Err(ModelError::UnstableVisit { queue: i, value: x });
            }
        }
        Ok(())
    }

    /// Full validation including the overload condition.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if let Err(e) = self.check() {
            report.push_error(e);
            return report;
        }
        match derive(self) {
            Ok(dq) => {
                report.rho = Some(dq.rho);
                if dq.rho <= 1.0 {
                    report.push_error(ModelError::NotOverloaded { rho: dq.rho });
                }
                for (i, r) in dq.rho_gamma.iter().enumerate() {
                    if *r >= 1.0 {
                        report.warnings.push(format!(
                            "queue {}: gamma/mu = {r:.6} >= 1 (per-queue load condition fails under the total-arrival-rate definition)",
                            i + 1
                        ));
                    }
                }
            }
            Err(e) => report.push_error(e),
        }
        report
    }

    /// Like [`NetworkSpec::validate`] but as a `Result`.
    pub fn require_overloaded(&self) -> Result<DerivedQuantities, ModelError> {
        self.check()?;
        let dq = derive(self)?;
        if dq.rho <= 1.0 {
            return Err(ModelError::NotOverloaded { rho: dq.rho });
        }
        Ok(dq)
    }
}

/// Closed-form quantities of a network. Vectors are indexed by queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedQuantities {
    /// Total arrival rates, solving `gamma = lambda + P^T gamma`.
    pub gamma: Vec<f64>,
    /// Mean total service requirement of a fresh arrival, `cbar = 1/mu + P cbar`.
    pub cbar: Vec<f64>,
    pub mu: Vec<f64>,
    /// `gamma_i / mu_i`.
    pub rho_gamma: Vec<f64>,
    /// `lambda_i * cbar_i`.
    pub rho_lc: Vec<f64>,
    /// Total offered load.
    pub rho: f64,
    /// Mean service time accumulated at queue `i` before leaving it.
    pub b_e: Vec<f64>,
    pub phi: Vec<f64>,
    /// Exhaustiveness of each queue's discipline.
    pub f: Vec<f64>,
    /// Mean visit time generated by one customer present at visit start.
    pub t: Vec<f64>,
    pub exit: Vec<f64>,
}

fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let x = a.clone().lu().solve(b).ok_or(ModelError::SingularRouting)?;
    let residual = (&a * &x - b).amax();
    let scale = 1.0 + x.amax();
    if !x.iter().all(|v| v.is_finite()) || residual > RESIDUAL_TOL * scale {
        return Err(ModelError::SingularRouting);
    }
    Ok(x)
}

pub(crate) fn routing_matrix(spec: &NetworkSpec) -> DMatrix<f64> {
    DMatrix::from_fn(spec.n, spec.n, |i, j| spec.routing[i][j])
}

/// Computes every closed-form derived quantity from the spec's gating laws.
pub fn derive(spec: &NetworkSpec) -> Result<DerivedQuantities, ModelError> {
    spec.check()?;
    let f: Vec<f64> = (0..spec.n)
        .map(|i| 1.0 - spec.gating[i].expected_power(spec.self_feed(i)))
        .collect();
    derive_with_exhaustiveness(spec, &f)
}

/// Same as [`derive`] but with the exhaustiveness vector given directly,
/// which decouples the analysis from any particular gating law.
pub fn derive_with_exhaustiveness(spec: &NetworkSpec, f: &[f64]) -> Result<DerivedQuantities, ModelError> {
    spec.check()?;
    let n = spec.n;
    if f.len() != n {
        return Err(ModelError::field("f", format!("expected {n} entries, got {}", f.len())));
    }
    if let Some(i) = f.iter().position(|x| !(*x > 0.0 && *x <= 1.0)) {
        return Err(ModelError::field(format!("f[{i}]"), "exhaustiveness must lie in (0, 1]"));
    }
    let p = routing_matrix(spec);
    let id = DMatrix::<f64>::identity(n, n);
    let lambda = DVector::from_column_slice(&spec.lambda);
    let mu: Vec<f64> = (0..n).map(|i| spec.mu(i)).collect();
    let inv_mu = DVector::from_iterator(n, mu.iter().map(|m| 1.0 / m));

    let gamma = solve(&id - p.transpose(), &lambda)?;
    let cbar = solve(&id - &p, &inv_mu)?;
    if gamma.iter().any(|g| *g < 0.0) || cbar.iter().any(|c| *c < 0.0) {
        return Err(ModelError::SingularRouting);
    }

    let rho_gamma: Vec<f64> = (0..n).map(|i| gamma[i] / mu[i]).collect();
    let rho_lc: Vec<f64> = (0..n).map(|i| spec.lambda[i] * cbar[i]).collect();
    let rho = rho_lc.iter().sum();
    let b_e: Vec<f64> = (0..n).map(|i| 1.0 / (mu[i] * (1.0 - spec.routing[i][i]))).collect();
    let phi: Vec<f64> = (0..n).map(|i| b_e[i] / (1.0 - spec.lambda[i] * b_e[i])).collect();
    let t: Vec<f64> = (0..n)
        .map(|i| f[i] / (mu[i] * (1.0 - spec.self_feed(i))))
        .collect();

    Ok(DerivedQuantities {
        gamma: gamma.iter().copied().collect(),
        cbar: cbar.iter().copied().collect(),
        mu,
        rho_gamma,
        rho_lc,
        rho,
        b_e,
        phi,
        f: f.to_vec(),
        t,
        exit: (0..n).map(|i| spec.exit_prob(i)).collect(),
    })
}

/// Mean duration of a `k`-gated visit to queue `i` started with one customer.
pub fn mean_visit_time_k(spec: &NetworkSpec, i: usize, k: GatingIndex) -> f64 {
    let x = spec.self_feed(i);
    (1.0 - k.power(x)) / (spec.mu(i) * (1.0 - x))
}

/// The three-queue network used throughout the tests and the CLI examples:
/// unit arrival rates, exponential services with rates (8, 5, 2), and the
/// given deterministic gating index at every queue.
pub fn reference_network(kappa: GatingIndex) -> NetworkSpec {
    NetworkSpec {
        n: 3,
        lambda: vec![1.0, 1.0, 1.0],
        service: [8.0, 5.0, 2.0]
            .iter()
            .map(|&rate| ServiceDistribution::Exponential { rate })
            .collect(),
        routing: vec![
            vec![0.1, 0.25, 0.2],
            vec![0.2, 0.1, 0.2],
            vec![0.2, 0.1, 0.25],
        ],
        gating: vec![GatingDistribution::point(kappa); 3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table() -> NetworkSpec {
        reference_network(GatingIndex::Infinite)
    }

    /// Gaussian elimination written out for 3x3, independent of nalgebra.
    fn eliminate3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
        for c in 0..3 {
            let piv = (c..3).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs())).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..3 {
                let m = a[r][c] / a[c][c];
                for k in c..3 {
                    a[r][k] -= m * a[c][k];
                }
                b[r] -= m * b[c];
            }
        }
        let mut x = [0.0; 3];
        for r in (0..3).rev() {
            let s: f64 = (r + 1..3).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn gamma_matches_hand_elimination() {
        let spec = table();
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = f64::from(u8::from(i == j)) - spec.routing[j][i];
            }
        }
        let oracle = eliminate3(a, [1.0, 1.0, 1.0]);
        let dq = derive(&spec).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(dq.gamma[i], oracle[i], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(dq.gamma[0], 2.081, epsilon = 1e-3);
        assert_abs_diff_eq!(dq.gamma[1], 1.957, epsilon = 1e-3);
        assert_abs_diff_eq!(dq.gamma[2], 2.410, epsilon = 1e-3);
    }

    #[test]
    fn reference_network_validates_with_warning() {
        let report = table().validate();
        assert!(report.is_valid(), "{:?}", report.errors);
        assert!(report.is_overloaded());
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].starts_with("queue 3"));
    }

    #[test]
    fn all_rerouted_is_rejected() {
        let mut spec = table();
        spec.routing = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]];
        let report = spec.validate();
        assert_eq!(report.first_error, Some(ModelError::NoExit));
        assert!(report.errors[0].contains("no exit probability"));
    }

    #[test]
    fn underloaded_is_rejected() {
        let spec = NetworkSpec {
            n: 2,
            lambda: vec![0.1, 0.1],
            service: vec![
                ServiceDistribution::Exponential { rate: 8.0 },
                ServiceDistribution::Exponential { rate: 5.0 },
            ],
            routing: vec![vec![0.0; 2]; 2],
            gating: vec![GatingDistribution::exhaustive(); 2],
        };
        let report = spec.validate();
        assert!(matches!(report.first_error, Some(ModelError::NotOverloaded { .. })));
        assert!(report.errors[0].contains("not overloaded"));
        assert_abs_diff_eq!(report.rho.unwrap(), 0.0325, epsilon = 1e-12);
    }

    #[test]
    fn closed_subnetwork_is_singular() {
        let mut spec = table();
        // queues 1 and 2 trade customers forever; only queue 3 has an exit
        spec.routing = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]];
        assert_eq!(derive(&spec).unwrap_err(), ModelError::SingularRouting);
    }

    #[test]
    fn single_queue_rejected() {
        let mut spec = table();
        spec.n = 1;
        spec.lambda = vec![3.0];
        assert!(matches!(spec.check(), Err(ModelError::InvalidField { .. })));
    }

    #[test]
    fn reference_loads() {
        let dq = derive(&table()).unwrap();
        let expect = [0.4749, 0.5194, 0.8625];
        for i in 0..3 {
            assert_abs_diff_eq!(dq.rho_lc[i], expect[i], epsilon = 5e-4);
        }
        assert_abs_diff_eq!(dq.rho, 1.8568, epsilon = 5e-4);
        assert_abs_diff_eq!(dq.rho_gamma.iter().sum::<f64>(), dq.rho, epsilon = 1e-10);
    }

    #[test]
    fn reference_visit_moments() {
        let dq = derive(&table()).unwrap();
        let b_e = [1.0 / 7.2, 1.0 / 4.5, 1.0 / 1.5];
        let phi = [1.0 / 6.2, 1.0 / 3.5, 2.0];
        for i in 0..3 {
            assert_abs_diff_eq!(dq.b_e[i], b_e[i], epsilon = 1e-12);
            assert_abs_diff_eq!(dq.phi[i], phi[i], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(dq.b_e[0], 0.138889, epsilon = 1e-6);
        assert_abs_diff_eq!(dq.phi[1], 0.28571, epsilon = 1e-5);
    }

    #[test]
    fn gated_exhaustiveness() {
        let dq = derive(&reference_network(GatingIndex::Finite(1))).unwrap();
        let expect = [0.775, 0.7, 0.25];
        for i in 0..3 {
            assert_abs_diff_eq!(dq.f[i], expect[i], epsilon = 1e-12);
            assert_abs_diff_eq!(dq.t[i], dq.f[i] * dq.phi[i], epsilon = 1e-12);
        }
        let ex = derive(&table()).unwrap();
        assert_eq!(ex.f, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn random_gating_mixes_powers() {
        let mut spec = table();
        spec.gating[2] = GatingDistribution {
            pmf: vec![
                GatingAtom { k: GatingIndex::Finite(1), p: 0.5 },
                GatingAtom { k: GatingIndex::Finite(2), p: 0.25 },
                GatingAtom { k: GatingIndex::Infinite, p: 0.25 },
            ],
        };
        let dq = derive(&spec).unwrap();
        // x = 0.75 at queue 3
        assert_abs_diff_eq!(dq.f[2], 1.0 - (0.5 * 0.75 + 0.25 * 0.5625), epsilon = 1e-15);
    }

    #[test]
    fn visit_time_closed_form() {
        let spec = table();
        assert_abs_diff_eq!(mean_visit_time_k(&spec, 0, GatingIndex::Finite(1)), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(mean_visit_time_k(&spec, 2, GatingIndex::Infinite), 2.0, epsilon = 1e-12);
        assert_eq!(mean_visit_time_k(&spec, 1, GatingIndex::Finite(0)), 0.0);
        let mut prev = 0.0;
        for k in 1..200 {
            let v = mean_visit_time_k(&spec, 2, GatingIndex::Finite(k));
            assert!(v >= prev);
            prev = v;
        }
        assert_abs_diff_eq!(prev, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn no_rerouting_reduces() {
        let mut spec = table();
        spec.routing = vec![vec![0.0; 3]; 3];
        let dq = derive(&spec).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(dq.cbar[i], 1.0 / spec.mu(i), epsilon = 1e-15);
            assert_abs_diff_eq!(dq.gamma[i], spec.lambda[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn gating_json_forms() {
        let g: GatingDistribution =
            serde_json::from_str(r#"{"pmf":[{"k":1,"p":0.5},{"k":"inf","p":0.5}]}"#).unwrap();
        assert_eq!(g.pmf[0].k, GatingIndex::Finite(1));
        assert_eq!(g.pmf[1].k, GatingIndex::Infinite);
        let back = serde_json::to_string(&g).unwrap();
        assert_eq!(back, r#"{"pmf":[{"k":1,"p":0.5},{"k":"inf","p":0.5}]}"#);
        assert!(serde_json::from_str::<GatingIndex>("0").is_err());
        assert!(serde_json::from_str::<GatingIndex>(r#""forever""#).is_err());
    }

    #[test]
    fn service_json_forms() {
        let s: ServiceDistribution =
            serde_json::from_str(r#"{"kind":"gamma","params":{"shape":2.0,"rate":4.0}}"#).unwrap();
        assert_abs_diff_eq!(s.mean(), 0.5);
        let e: ServiceDistribution =
            serde_json::from_str(r#"{"kind":"exponential","params":{"rate":8}}"#).unwrap();
        assert_abs_diff_eq!(e.mean(), 0.125);
    }

    #[test]
    fn pmf_must_sum_to_one() {
        let mut spec = table();
        spec.gating[0].pmf[0].p = 0.9;
        assert!(spec.check().is_err());
    }
}
