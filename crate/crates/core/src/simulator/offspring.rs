//! Monte Carlo draws of visit and session offspring, visit durations, and a
//! stage-level cycle sampler for the embedded branching process.

use rand_distr::{Binomial, Distribution, Poisson};
use serde::Serialize;

use super::engine::{Engine, Step};
use crate::branching::OffspringSampler;
use crate::model::NetworkSpec;
use crate::rng::{self, Purpose, SimRng};

/// Mean with standard error and normal 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub half_width: f64,
    pub reps: u64,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, reps: u64) -> Self {
        let n = reps as f64;
        let mean = sum / n;
        let var = if reps > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let std_error = (var / n).sqrt();
        McEstimate {
            mean,
            std_error,
            half_width: 1.96 * std_error,
            reps,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.mean - x).abs() <= self.half_width
    }
}

/// Componentwise sample means of an offspring vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffspringMc {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub reps: u64,
}

/// One visit to `Q_i` that starts with a single customer there and nothing
/// elsewhere. Returns the queue lengths at the end of the visit and its
/// duration.
pub fn visit_offspring_sample(spec: &NetworkSpec, i: usize, rng: &mut SimRng) -> (Vec<u64>, f64) {
    let mut eng = Engine::new(spec, rng);
    eng.waiting[i] = 1;
    eng.start_visit(i);
    while eng.advance() == Step::Serving {
        eng.step();
    }
    (eng.waiting.clone(), eng.now)
}

/// One customer at `Q_i`, the server just before `Q_1` at time 0; runs one
/// full cycle and returns the queue lengths when the server is back before
/// `Q_1`. Arrivals during the cycle are counted.
pub fn session_offspring_sample(spec: &NetworkSpec, i: usize, rng: &mut SimRng) -> Vec<u64> {
    let mut eng = Engine::new(spec, rng);
    eng.waiting[i] = 1;
    eng.start_visit(0);
    loop {
        match eng.advance() {
            Step::Serving => eng.step(),
            Step::VisitEnd if eng.pos + 1 < spec.n => {
                let next = eng.pos + 1;
                eng.start_visit(next);
            }
            Step::VisitEnd => return eng.waiting.clone(),
        }
    }
}

fn offspring_mc<F: FnMut(&mut SimRng) -> Vec<u64>>(
    n: usize,
    reps: u64,
    mut rng: SimRng,
    mut draw: F,
) -> OffspringMc {
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for _ in 0..reps {
        for (j, x) in draw(&mut rng).into_iter().enumerate() {
            let x = x as f64;
            sum[j] += x;
            sum_sq[j] += x * x;
        }
    }
    let est: Vec<McEstimate> = (0..n).map(|j| McEstimate::from_sums(sum[j], sum_sq[j], reps)).collect();
    OffspringMc {
        mean: est.iter().map(|e| e.mean).collect(),
        std_error: est.iter().map(|e| e.std_error).collect(),
        reps,
    }
}

pub fn visit_offspring_mc(spec: &NetworkSpec, i: usize, reps: u64, seed: u64) -> OffspringMc {
    let rng = rng::stream(seed, i as u64, Purpose::VisitOffspring);
    offspring_mc(spec.n, reps, rng, |r| visit_offspring_sample(spec, i, r).0)
}

pub fn session_offspring_mc(spec: &NetworkSpec, i: usize, reps: u64, seed: u64) -> OffspringMc {
    let rng = rng::stream(seed, i as u64, Purpose::SessionOffspring);
    offspring_mc(spec.n, reps, rng, |r| session_offspring_sample(spec, i, r))
}

/// Duration of a visit to `Q_i` started with one customer. A gating law
/// cannot put mass on 0, so the visit always serves that customer.
pub fn visit_time_mc(spec: &NetworkSpec, i: usize, reps: u64, seed: u64) -> McEstimate {
    let mut rng = rng::stream(seed, i as u64, Purpose::VisitTime);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..reps {
        let (_, d) = visit_offspring_sample(spec, i, &mut rng);
        sum += d;
        sum_sq += d * d;
    }
    McEstimate::from_sums(sum, sum_sq, reps)
}

/// Session-offspring sampler that works a stage at a time: the total work
/// of a batch is drawn in one shot, the arrivals during it are Poisson, and
/// the routing of the batch is multinomial. This has the same law as the
/// event simulation but its cost does not grow with the population.
pub struct CycleSampler<'a> {
    spec: &'a NetworkSpec,
    point_gating: bool,
}

impl<'a> CycleSampler<'a> {
    pub fn new(spec: &'a NetworkSpec) -> Self {
        CycleSampler {
            spec,
            point_gating: spec.gating.iter().all(|g| g.as_point().is_some()),
        }
    }

    /// Runs one cycle from `state` at the position before `Q_1`, in place.
    pub fn cycle(&self, state: &mut [u64], rng: &mut SimRng) {
        let spec = self.spec;
        let n = spec.n;
        let mut routed = vec![0u64; n];
        for i in 0..n {
            if state[i] == 0 {
                continue;
            }
            let cap = spec.gating[i].sample(rng).stages();
            let mut stages = 0;
            while stages < cap && state[i] > 0 {
                stages += 1;
                let batch = state[i];
                state[i] = 0;
                let work = spec.service[i].sample_sum(batch, rng);
                for j in 0..n {
                    let mean = spec.lambda[j] * work;
                    if mean > 0.0 {
                        state[j] += Poisson::new(mean).expect("finite positive mean").sample(rng) as u64;
                    }
                }
                multinomial(batch, &spec.routing[i], rng, &mut routed);
                for j in 0..n {
                    state[j] += routed[j];
                }
            }
        }
    }
}

/// Splits `count` items over the rows of `probs` with the remainder
/// discarded, by sequential binomial draws.
fn multinomial(count: u64, probs: &[f64], rng: &mut SimRng, out: &mut [u64]) {
    let mut left = count;
    let mut mass = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        out[j] = 0;
        if left == 0 || p <= 0.0 {
            continue;
        }
        let q = (p / mass).min(1.0);
        let k = if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).expect("probability in [0, 1]").sample(rng)
        };
        out[j] = k;
        left -= k;
        mass -= p;
    }
}

impl OffspringSampler for CycleSampler<'_> {
    fn types(&self) -> usize {
        self.spec.n
    }

    fn sample_offspring(&self, i: usize, rng: &mut SimRng) -> Vec<u64> {
        let mut state = vec![0; self.spec.n];
        state[i] = 1;
        self.cycle(&mut state, rng);
        state
    }

    /// With deterministic gating the descendants of distinct individuals
    /// evolve independently through a shared cycle, so the whole generation
    /// can be pushed through one cycle. A random gating index is shared by
    /// everyone in the visit, which breaks that independence.
    fn sample_generation(&self, population: &[u64], rng: &mut SimRng) -> Vec<u64> {
        if self.point_gating {
            let mut state = population.to_vec();
            self.cycle(&mut state, rng);
            return state;
        }
        let mut next = vec![0u64; self.spec.n];
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
