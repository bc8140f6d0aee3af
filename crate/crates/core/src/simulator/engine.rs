//! Event mechanics shared by the trajectory simulator and the offspring
//! samplers.
//!
//! The server is either serving one customer or idling before `Q_1` in an
//! empty system, so the calendar never holds more than one service
//! completion and one external arrival. Simultaneous events are resolved
//! completion first.

use crate::model::{exp_inverse, NetworkSpec};
use crate::rng::SimRng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    /// A service is in progress.
    Serving,
    /// The visit at `pos` is over; the caller moves the server on.
    VisitEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Next {
    Completion(f64),
    Arrival(f64),
}

impl Next {
    pub(crate) fn time(self) -> f64 {
        match self {
            Next::Completion(t) | Next::Arrival(t) => t,
        }
    }
}

pub(crate) struct Engine<'a> {
    spec: &'a NetworkSpec,
    route_cum: Vec<Vec<f64>>,
    arrival_cum: Vec<f64>,
    total_lambda: f64,
    rng: &'a mut SimRng,
    pub now: f64,
    /// Customers not in the current gate batch.
    pub waiting: Vec<u64>,
    pub pos: usize,
    /// Customers of the current batch still to finish, including the one in
    /// service.
    pub batch_left: u64,
    stages_done: u64,
    stage_cap: u64,
    pub completion: Option<f64>,
    pub next_arrival: f64,
    pub in_visit: bool,
    visit_started: f64,
    /// Time spent at each queue over finished visits.
    pub occupation: Vec<f64>,
}

fn cumulative(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    xs.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

impl<'a> Engine<'a> {
    pub(crate) fn new(spec: &'a NetworkSpec, rng: &'a mut SimRng) -> Self {
        let total_lambda: f64 = spec.lambda.iter().sum();
        let arrival_cum = cumulative(spec.lambda.iter().map(|l| l / total_lambda));
        let route_cum = spec.routing.iter().map(|r| cumulative(r.iter().copied())).collect();
        let next_arrival = exp_inverse(total_lambda, rng);
        Engine {
            spec,
            route_cum,
            arrival_cum,
            total_lambda,
            rng,
            now: 0.0,
            waiting: vec![0; spec.n],
            pos: 0,
            batch_left: 0,
            stages_done: 0,
            stage_cap: 0,
            completion: None,
            next_arrival,
            in_visit: false,
            visit_started: 0.0,
            occupation: vec![0.0; spec.n],
        }
    }

    pub(crate) fn total(&self) -> u64 {
        self.waiting.iter().sum::<u64>() + self.batch_left
    }

    pub(crate) fn queue_len(&self, j: usize) -> u64 {
        self.waiting[j] + if j == self.pos { self.batch_left } else { 0 }
    }

    /// Cumulative server time at each queue up to `t >= now`.
    pub(crate) fn occupation_at(&self, t: f64) -> Vec<f64> {
        let mut occ = self.occupation.clone();
        if self.in_visit {
            occ[self.pos] += t - self.visit_started;
        }
        occ
    }

    /// Server arrives at queue `i`. The gating index is drawn only for a
    /// nonempty queue; an empty queue ends the visit at once.
    pub(crate) fn start_visit(&mut self, i: usize) {
        self.pos = i;
        self.in_visit = true;
        self.visit_started = self.now;
        self.stages_done = 0;
        self.batch_left = 0;
        self.stage_cap = if self.waiting[i] > 0 {
            self.spec.gating[i].sample(self.rng).stages()
        } else {
            0
        };
    }

    /// Starts the next service or closes the next gate, whichever applies.
    pub(crate) fn advance(&mut self) -> Step {
        loop {
            if self.completion.is_some() {
                return Step::Serving;
            }
            if self.batch_left > 0 {
                let s = self.spec.service[self.pos].sample(self.rng);
                self.completion = Some(self.now + s);
                return Step::Serving;
            }
            let i = self.pos;
            if self.stages_done < self.stage_cap && self.waiting[i] > 0 {
                self.batch_left = self.waiting[i];
                self.waiting[i] = 0;
                self.stages_done += 1;
                continue;
            }
            self.occupation[i] += self.now - self.visit_started;
            self.in_visit = false;
            return Step::VisitEnd;
        }
    }

    pub(crate) fn peek(&self) -> Next {
        match self.completion {
            Some(c) if c <= self.next_arrival => Next::Completion(c),
            _ => Next::Arrival(self.next_arrival),
        }
    }

    /// Finishes the service in progress and routes the customer. Returns the
    /// destination queue, `None` for an exit.
    pub(crate) fn complete(&mut self) -> Option<usize> {
        let t = self.completion.take().expect("a service is in progress");
        self.now = t;
        self.batch_left -= 1;
        let u: f64 = self.rng.random();
        let dest = self.route_cum[self.pos].iter().position(|&c| u < c);
        if let Some(j) = dest {
            self.waiting[j] += 1;
        }
        dest
    }

    /// Takes the pending external arrival and schedules the next one.
    pub(crate) fn arrive(&mut self) -> usize {
        self.now = self.next_arrival;
        let u: f64 = self.rng.random();
        let j = self
            .arrival_cum
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.spec.n - 1);
        self.waiting[j] += 1;
        self.next_arrival = self.now + exp_inverse(self.total_lambda, self.rng);
        j
    }

    /// Processes the next event without recording anything.
    pub(crate) fn step(&mut self) {
        match self.peek() {
            Next::Completion(_) => {
                self.complete();
            }
            Next::Arrival(_) => {
                self.arrive();
            }
        }
    }
}
