//! Search over deterministic gating indexes for the smallest fluid growth
//! rate `beta`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::model::{GatingIndex, NetworkSpec};
use crate::rng::{self, Purpose, SimRng};
use crate::{analyze, analyze_with_exhaustiveness, Error};

/// Largest number of assignments the brute-force search will enumerate.
pub const MAX_COMBINATIONS: u128 = 1_000_000;

/// Relative gap below which two growth rates count as equal.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, ThisError)]
pub enum OptError {
    #[error("{combinations} combinations exceed the cap of {MAX_COMBINATIONS}")]
    TooManyCombinations { combinations: u128 },
    #[error("candidate set for queue {0} is empty")]
    EmptyCandidates(usize),
    #[error("expected {expected} candidate sets, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid search parameter: {0}")]
    Params(String),
    #[error("no assignment could be evaluated: {0}")]
    NothingEvaluated(Error),
}

pub type GatingAssignment = Vec<GatingIndex>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub best: GatingAssignment,
    #[serde(rename = "beta")]
    pub best_beta: f64,
    /// `(iteration, best-so-far beta)`.
    pub history: Vec<(usize, f64)>,
    pub evaluations: usize,
}

/// `beta` of the spec with every queue switched to the given index.
pub fn evaluate(spec: &NetworkSpec, kappa: &[GatingIndex]) -> Result<f64, Error> {
    Ok(analyze(&spec.with_gating(kappa))?.beta)
}

/// `beta` with the exhaustiveness vector set directly, for gating laws that
/// are not point masses.
pub fn evaluate_f(spec: &NetworkSpec, f: &[f64]) -> Result<f64, Error> {
    Ok(analyze_with_exhaustiveness(spec, f)?.beta)
}

/// `{1, ..., kmax, inf}`.
pub fn candidate_set(kmax: u32) -> Vec<GatingIndex> {
    let mut c: Vec<GatingIndex> = (1..=kmax).map(GatingIndex::Finite).collect();
    c.push(GatingIndex::Infinite);
    c
}

/// Tie-break order: exhaustive service first, then integers ascending.
fn tie_key(k: GatingIndex) -> (u8, u32) {
    match k {
        GatingIndex::Infinite => (0, 0),
        GatingIndex::Finite(k) => (1, k),
    }
}

fn tie_order(a: &[GatingIndex], b: &[GatingIndex]) -> std::cmp::Ordering {
    a.iter().map(|&k| tie_key(k)).cmp(b.iter().map(|&k| tie_key(k)))
}

fn improves(beta: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) => beta < b - TIE_TOL * b.abs(),
    }
}

fn check_candidates(spec: &NetworkSpec, candidates: &[Vec<GatingIndex>]) -> Result<(), OptError> {
    if candidates.len() != spec.n {
        return Err(OptError::Dimension {
            expected: spec.n,
            got: candidates.len(),
        });
    }
    if let Some(i) = candidates.iter().position(|c| c.is_empty()) {
        return Err(OptError::EmptyCandidates(i));
    }
    Ok(())
}

/// Evaluates every assignment. Ties within [`TIE_TOL`] go to the smallest
/// assignment in the order of [`tie_key`] compared queue by queue.
pub fn exhaustive_search(spec: &NetworkSpec, candidates: &[Vec<GatingIndex>]) -> Result<OptimizationResult, OptError> {
    check_candidates(spec, candidates)?;
    let combinations: u128 = candidates.iter().map(|c| c.len() as u128).product();
    if combinations > MAX_COMBINATIONS {
        return Err(OptError::TooManyCombinations { combinations });
    }
    let sorted: Vec<Vec<GatingIndex>> = candidates
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort_by_key(|&k| tie_key(k));
            c.dedup();
            c
        })
        .collect();

    let n = spec.n;
    let mut idx = vec![0usize; n];
    let mut best: Option<(GatingAssignment, f64)> = None;
    let mut history = Vec::new();
    let mut last_error = None;
    let mut evaluations = 0;
    loop {
        let kappa: GatingAssignment = (0..n).map(|i| sorted[i][idx[i]]).collect();
        evaluations += 1;
        match evaluate(spec, &kappa) {
            Ok(beta) => {
                if improves(beta, best.as_ref().map(|b| b.1)) {
                    best = Some((kappa, beta));
                    history.push((evaluations, beta));
                }
            }
            Err(e) => last_error = Some(e),
        }
        // odometer over the sorted sets, last queue fastest
        let mut q = n;
        loop {
            if q == 0 {
                let (best, best_beta) = match best {
                    Some(b) => b,
                    None => return Err(OptError::NothingEvaluated(last_error.expect("some evaluation failed"))),
                };
                if history.last().map(|h| h.0) != Some(evaluations) {
                    history.push((evaluations, best_beta));
                }
                return Ok(OptimizationResult {
                    best,
                    best_beta,
                    history,
                    evaluations,
                });
            }
            q -= 1;
            idx[q] += 1;
            if idx[q] < sorted[q].len() {
                break;
            }
            idx[q] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub mutation: f64,
    pub crossover: f64,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 20,
            generations: 100,
            mutation: 0.1,
            crossover: 0.8,
            seed: 0,
        }
    }
}

struct Fitness<'a> {
    spec: &'a NetworkSpec,
    memo: HashMap<GatingAssignment, f64>,
    last_error: Option<Error>,
}

impl Fitness<'_> {
    /// Failed evaluations score `+inf` so they never win a tournament.
    fn get(&mut self, kappa: &GatingAssignment) -> f64 {
        if let Some(&b) = self.memo.get(kappa) {
            return b;
        }
        let b = match evaluate(self.spec, kappa) {
            Ok(b) => b,
            Err(e) => {
                self.last_error = Some(e);
                f64::INFINITY
            }
        };
        self.memo.insert(kappa.clone(), b);
        b
    }
}

fn better(a: (&GatingAssignment, f64), b: (&GatingAssignment, f64)) -> bool {
    improves(a.1, Some(b.1)) || (!improves(b.1, Some(a.1)) && tie_order(a.0, b.0).is_lt())
}

/// Seeded genetic search: size-2 tournaments, uniform crossover, per-gene
/// mutation to a uniformly drawn candidate, and the best individual carried
/// over unchanged. `initial` replaces the random first population.
pub fn genetic_search(
    spec: &NetworkSpec,
    candidates: &[Vec<GatingIndex>],
    params: &GaParams,
    initial: Option<Vec<GatingAssignment>>,
) -> Result<OptimizationResult, OptError> {
    check_candidates(spec, candidates)?;
    if params.population == 0 {
        return Err(OptError::Params("population must be positive".into()));
    }
    for (name, p) in [("mutation", params.mutation), ("crossover", params.crossover)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(OptError::Params(format!("{name} rate {p} outside [0, 1]")));
        }
    }
    let n = spec.n;
    let mut rng: SimRng = rng::stream(params.seed, 0, Purpose::Genetic);
    let random_gene = |i: usize, rng: &mut SimRng| candidates[i][rng.random_range(0..candidates[i].len())];

    let mut pop: Vec<GatingAssignment> = match initial {
        Some(p) => {
            if p.is_empty() || p.iter().any(|g| g.len() != n) {
                return Err(OptError::Params("initial population has the wrong shape".into()));
            }
            p
        }
        None => (0..params.population)
            .map(|_| (0..n).map(|i| random_gene(i, &mut rng)).collect())
            .collect(),
    };
    let mut fit = Fitness {
        spec,
        memo: HashMap::new(),
        last_error: None,
    };
    let mut scores: Vec<f64> = pop.iter().map(|g| fit.get(g)).collect();

    let best_of = |pop: &[GatingAssignment], scores: &[f64]| {
        let mut b = 0;
        for k in 1..pop.len() {
            if better((&pop[k], scores[k]), (&pop[b], scores[b])) {
                b = k;
            }
        }
        b
    };

    let mut b = best_of(&pop, &scores);
    let mut best = (pop[b].clone(), scores[b]);
    let mut history = vec![(0, best.1)];

    for gen in 1..=params.generations {
        let size = pop.len();
        let mut next = vec![pop[b].clone()];
        let tournament = |rng: &mut SimRng| {
            let x = rng.random_range(0..size);
            let y = rng.random_range(0..size);
            if better((&pop[y], scores[y]), (&pop[x], scores[x])) {
                y
            } else {
                x
            }
        };
        while next.len() < size {
            let p1 = tournament(&mut rng);
            let p2 = tournament(&mut rng);
            let mut child = pop[p1].clone();
            if rng.random::<f64>() < params.crossover {
                for (i, gene) in child.iter_mut().enumerate() {
                    if rng.random::<bool>() {
                        *gene = pop[p2][i];
                    }
                }
            }
            for (i, gene) in child.iter_mut().enumerate() {
                if rng.random::<f64>() < params.mutation {
                    *gene = random_gene(i, &mut rng);
                }
            }
            next.push(child);
        }
        pop = next;
        scores = pop.iter().map(|g| fit.get(g)).collect();
        b = best_of(&pop, &scores);
        if better((&pop[b], scores[b]), (&best.0, best.1)) {
            best = (pop[b].clone(), scores[b]);
        }
        history.push((gen, best.1));
    }

    if !best.1.is_finite() {
        return Err(OptError::NothingEvaluated(fit.last_error.expect("an evaluation failed")));
    }
    Ok(OptimizationResult {
        best: best.0,
        best_beta: best.1,
        history,
        evaluations: fit.memo.len(),
    })
}
