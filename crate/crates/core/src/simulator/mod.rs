//! Discrete-event simulation of the polling network.
//!
//! Arrivals are Poisson, service times are drawn from the full service
//! law, switches are instantaneous. At a visit to `Q_i` the gate closes up
//! to `kappa_i` times; each stage serves exactly the customers present at
//! its closure, so customers who arrive or are routed back to `Q_i` during
//! a stage wait for the next one. A visit ends early once a stage boundary
//! finds the queue empty.

mod engine;
mod fit;
mod offspring;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, NetworkSpec};
use crate::rng::{self, Purpose};
use engine::{Engine, Next, Step};

pub use fit::{estimate_xi, eta, fit_distance, scaled, ScaledTrace, XiFit};
pub use offspring::{
    session_offspring_mc, session_offspring_sample, visit_offspring_mc, visit_offspring_sample,
    visit_time_mc, CycleSampler, McEstimate, OffspringMc,
};

pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("horizon too large: more than {0} events")]
    HorizonTooLarge(u64),
    #[error("insufficient horizon: need {needed}, trace covers {horizon}")]
    InsufficientHorizon { needed: f64, horizon: f64 },
    #[error("time {0} is not on the record grid")]
    OffGrid(f64),
    #[error("trace too short: the scaled path is identically zero")]
    TraceTooShort,
}

fn default_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default)]
    pub replication: u64,
    pub horizon: f64,
    /// Nondecreasing sample times in `[0, horizon]`.
    #[serde(default)]
    pub record_grid: Vec<f64>,
    #[serde(default = "default_cap")]
    pub event_cap: u64,
}

impl SimConfig {
    pub fn new(seed: u64, horizon: f64, record_grid: Vec<f64>) -> Self {
        SimConfig {
            seed,
            replication: 0,
            horizon,
            record_grid,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }

    /// Config whose horizon and record grid are `theta^n` times the window.
    pub fn scaled(seed: u64, replication: u64, theta: f64, n: i32, window: &[f64]) -> Self {
        let s = theta.powi(n);
        let grid: Vec<f64> = window.iter().map(|t| s * t).collect();
        let horizon = grid.iter().copied().fold(0.0, f64::max);
        SimConfig {
            seed,
            replication,
            horizon,
            record_grid: grid,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }

    fn check(&self) -> Result<(), SimError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if let Some(t) = self.record_grid.iter().find(|t| !(**t >= 0.0 && **t <= self.horizon)) {
            return Err(SimError::Config(format!("grid time {t} outside [0, {}]", self.horizon)));
        }
        if self.record_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(SimError::Config("record grid must be nondecreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub horizon: f64,
    pub grid: Vec<f64>,
    /// Queue lengths at each grid time, right-continuous.
    pub queue_path: Vec<Vec<u64>>,
    /// Cumulative time the server has spent at each queue, per grid time.
    pub occupation: Vec<Vec<f64>>,
    /// `t^(n)`: instants the server reaches the position before `Q_1`.
    pub cycle_instants: Vec<f64>,
    /// Queue lengths at each cycle instant.
    pub cycle_states: Vec<Vec<u64>>,
    /// `visit_instants[i][n]` is `t_i^(n)`, the start of the n-th visit to `Q_i`.
    pub visit_instants: Vec<Vec<f64>>,
    /// 1-based index of the last cycle that started with an empty system.
    pub nu: usize,
    pub event_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival { queue: usize },
    Departure { from: usize },
    Reroute { from: usize, to: usize },
}

/// What the observer sees after each event has been handled.
#[derive(Debug, Clone, PartialEq)]
pub struct EventInfo {
    pub time: f64,
    pub kind: EventKind,
    pub total_before: u64,
    pub total_after: u64,
    pub queues: Vec<u64>,
    /// Server position and whether a service is under way.
    pub pos: usize,
    pub busy: bool,
}

struct Recorder {
    grid: Vec<f64>,
    next: usize,
    queue_path: Vec<Vec<u64>>,
    occupation: Vec<Vec<f64>>,
    cycle_instants: Vec<f64>,
    cycle_states: Vec<Vec<u64>>,
    visit_instants: Vec<Vec<f64>>,
    nu: usize,
}

impl Recorder {
    /// Records every grid time strictly before `t` with the current state.
    fn flush_before(&mut self, eng: &Engine, t: f64) {
        while self.next < self.grid.len() && self.grid[self.next] < t {
            self.push(eng);
        }
    }

    fn flush_through(&mut self, eng: &Engine, t: f64) {
        while self.next < self.grid.len() && self.grid[self.next] <= t {
            self.push(eng);
        }
    }

    fn push(&mut self, eng: &Engine) {
        let g = self.grid[self.next];
        self.queue_path.push((0..eng.waiting.len()).map(|j| eng.queue_len(j)).collect());
        self.occupation.push(eng.occupation_at(g));
        self.next += 1;
    }
}

/// Moves the server on until a service starts or it parks before `Q_1`.
fn settle(eng: &mut Engine, rec: &mut Recorder, idle: &mut bool, begin_cycle: bool) {
    let n = eng.waiting.len();
    let mut at_cycle_start = begin_cycle;
    loop {
        if at_cycle_start {
            rec.cycle_instants.push(eng.now);
            rec.cycle_states.push(eng.waiting.clone());
            if eng.total() == 0 {
                rec.nu = rec.cycle_instants.len();
                *idle = true;
                return;
            }
            rec.visit_instants[0].push(eng.now);
            eng.start_visit(0);
            at_cycle_start = false;
        }
        match eng.advance() {
            Step::Serving => return,
            Step::VisitEnd => {
                let i = eng.pos + 1;
                if i < n {
                    rec.visit_instants[i].push(eng.now);
                    eng.start_visit(i);
                } else {
                    at_cycle_start = true;
                }
            }
        }
    }
}

/// Simulates from an empty system at time 0 up to `cfg.horizon`.
pub fn run(spec: &NetworkSpec, cfg: &SimConfig) -> Result<SimTrace, SimError> {
    run_observed(spec, cfg, |_| {})
}

/// Like [`run`], calling `observe` after every arrival and service completion.
pub fn run_observed<F: FnMut(&EventInfo)>(
    spec: &NetworkSpec,
    cfg: &SimConfig,
    mut observe: F,
) -> Result<SimTrace, SimError> {
    spec.check()?;
    cfg.check()?;
    let n = spec.n;
    let mut rng = rng::stream(cfg.seed, cfg.replication, Purpose::Trajectory);
    let mut eng = Engine::new(spec, &mut rng);
    let mut rec = Recorder {
        grid: cfg.record_grid.clone(),
        next: 0,
        queue_path: Vec::with_capacity(cfg.record_grid.len()),
        occupation: Vec::with_capacity(cfg.record_grid.len()),
        cycle_instants: Vec::new(),
        cycle_states: Vec::new(),
        visit_instants: vec![Vec::new(); n],
        nu: 0,
    };
    let mut idle = false;
    let mut events = 0u64;

    settle(&mut eng, &mut rec, &mut idle, true);
    loop {
        let next = eng.peek();
        let t = next.time();
        if t > cfg.horizon {
            break;
        }
        rec.flush_before(&eng, t);
        events += 1;
        if events > cfg.event_cap {
            return Err(SimError::HorizonTooLarge(cfg.event_cap));
        }
        let total_before = eng.total();
        let kind = match next {
            Next::Completion(_) => {
                let from = eng.pos;
                let kind = match eng.complete() {
                    Some(to) => EventKind::Reroute { from, to },
                    None => EventKind::Departure { from },
                };
                settle(&mut eng, &mut rec, &mut idle, false);
                kind
            }
            Next::Arrival(_) => {
                let queue = eng.arrive();
                if idle {
                    idle = false;
                    rec.visit_instants[0].push(eng.now);
                    eng.start_visit(0);
                    settle(&mut eng, &mut rec, &mut idle, false);
                }
                EventKind::Arrival { queue }
            }
        };
        observe(&EventInfo {
            time: eng.now,
            kind,
            total_before,
            total_after: eng.total(),
            queues: (0..n).map(|j| eng.queue_len(j)).collect(),
            pos: eng.pos,
            busy: eng.completion.is_some(),
        });
    }
    rec.flush_through(&eng, cfg.horizon);
    debug_assert_eq!(rec.next, rec.grid.len());

    Ok(SimTrace {
        horizon: cfg.horizon,
        grid: rec.grid,
        queue_path: rec.queue_path,
        occupation: rec.occupation,
        cycle_instants: rec.cycle_instants,
        cycle_states: rec.cycle_states,
        visit_instants: rec.visit_instants,
        nu: rec.nu,
        event_count: events,
    })
}

/// Writes `n,t_cycle` rows, `n` 1-based.
pub fn write_cycles_csv<W: Write>(mut w: W, cycle_instants: &[f64]) -> io::Result<()> {
    writeln!(w, "n,t_cycle")?;
    for (k, t) in cycle_instants.iter().enumerate() {
        writeln!(w, "{},{}", k + 1, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_network, GatingDistribution, GatingIndex, ServiceDistribution};

    fn lone_customer_spec() -> NetworkSpec {
        NetworkSpec {
            n: 2,
            lambda: vec![1e-9, 1e-9],
            service: vec![ServiceDistribution::Exponential { rate: 1.0 }; 2],
            routing: vec![vec![0.0; 2]; 2],
            gating: vec![GatingDistribution::gated(); 2],
        }
    }

    #[test]
    fn gated_visit_serves_one_and_empties() {
        let spec = lone_customer_spec();
        let mut r = rng::stream(1, 0, Purpose::Trajectory);
        let (left, duration) = visit_offspring_sample(&spec, 0, &mut r);
        assert_eq!(left, vec![0, 0]);
        assert!(duration > 0.0);
    }

    #[test]
    fn near_empty_dynamics() {
        let mut spec = lone_customer_spec();
        spec.lambda = vec![0.01, 0.01];
        spec.service = vec![ServiceDistribution::Exponential { rate: 10.0 }; 2];
        let grid: Vec<f64> = (0..=1000).map(|k| k as f64).collect();
        let tr = run(&spec, &SimConfig::new(3, 1000.0, grid)).unwrap();
        assert!(tr.nu >= 1);
        let busy = tr.queue_path.iter().filter(|x| x.iter().sum::<u64>() > 0).count();
        assert!(busy < 100, "{busy} busy grid points");
        assert_eq!(tr.queue_path.len(), 1001);
    }

    #[test]
    fn grid_and_config_checks() {
        let spec = reference_network(GatingIndex::Infinite);
        assert!(run(&spec, &SimConfig::new(0, 0.0, vec![])).is_err());
        assert!(run(&spec, &SimConfig::new(0, 1.0, vec![2.0])).is_err());
        assert!(run(&spec, &SimConfig::new(0, 1.0, vec![0.5, 0.1])).is_err());
        let mut cfg = SimConfig::new(0, 1e4, vec![]);
        cfg.event_cap = 100;
        assert_eq!(run(&spec, &cfg), Err(SimError::HorizonTooLarge(100)));
    }

    #[test]
    fn path_starts_empty_and_is_right_continuous() {
        let spec = reference_network(GatingIndex::Finite(1));
        let cfg = SimConfig::new(5, 50.0, vec![0.0, 10.0, 50.0]);
        let tr = run(&spec, &cfg).unwrap();
        assert_eq!(tr.queue_path[0], vec![0, 0, 0]);
        assert_eq!(tr.cycle_instants[0], 0.0);
        assert_eq!(tr.occupation[0], vec![0.0; 3]);
        // occupation never exceeds elapsed time
        for (g, occ) in tr.grid.iter().zip(&tr.occupation) {
            assert!(occ.iter().sum::<f64>() <= g + 1e-9);
        }
    }

    #[test]
    fn cycles_csv_layout() {
        let mut out = Vec::new();
        write_cycles_csv(&mut out, &[0.0, 1.5]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "n,t_cycle\n1,0\n2,1.5\n");
    }
}
