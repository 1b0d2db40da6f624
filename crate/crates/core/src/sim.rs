//! Discrete-time stochastic engine.
//!
//! Each step: schedule from the current lengths, cap at the available work,
//! complete head-of-line jobs with their geometric completion probability,
//! route completions (one categorical draw including exit), then append the
//! routed jobs followed by fresh external arrivals.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{validate_spec, ArrivalStream, NetworkSpec, Schedule, SCHEMA_VERSION};
use crate::policy::{PolicyConfig, PolicyKind, Scheduler};

/// Release builds check flow conservation this often.
const RELEASE_CHECK_EVERY: u64 = 10_000;

const STREAM_ARRIVALS: u64 = 0;
const STREAM_SERVICE: u64 = 1;
const STREAM_ROUTING: u64 = 2;
const STREAM_POLICY: u64 = 3;

pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples the external arrival streams of a spec, one step at a time.
#[derive(Clone, Debug)]
pub struct ArrivalSampler {
    streams: Vec<ArrivalStream>,
}

impl ArrivalSampler {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            streams: spec.arrivals.clone(),
        }
    }

    /// Pushes the class of every arrival this step onto `out`, in stream order.
    pub fn sample(&self, rng: &mut impl Rng, out: &mut Vec<usize>) {
        for s in &self.streams {
            let fire = if s.rate >= 1.0 {
                true
            } else if s.rate <= 0.0 {
                false
            } else {
                rng.gen::<f64>() < s.rate
            };
            if fire {
                let k = if s.classes.len() == 1 {
                    s.classes[0]
                } else {
                    s.classes[rng.gen_range(0..s.classes.len())]
                };
                out.push(k);
            }
        }
    }
}

/// Job counts per class at time 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialState {
    pub class_counts: Vec<u64>,
}

impl InitialState {
    pub fn empty(spec: &NetworkSpec) -> Self {
        Self {
            class_counts: vec![0; spec.num_classes()],
        }
    }

    /// Per-queue counts; a multiclass queue's jobs go to its first class.
    pub fn from_queue_counts(spec: &NetworkSpec, counts: &[u64]) -> Result<Self> {
        if counts.len() != spec.num_queues() {
            return Err(Error::DimensionMismatch {
                expected: spec.num_queues(),
                found: counts.len(),
            });
        }
        let mut out = Self::empty(spec);
        for (j, classes) in spec.queue_classes().iter().enumerate() {
            if let Some(&k) = classes.first() {
                out.class_counts[k] = counts[j];
            }
        }
        Ok(out)
    }

    /// Counts keyed by class id, or by queue id (first class of that queue).
    pub fn from_pairs<S: AsRef<str>>(spec: &NetworkSpec, pairs: &[(S, u64)]) -> Result<Self> {
        let mut out = Self::empty(spec);
        let queue_classes = spec.queue_classes();
        for (id, n) in pairs {
            let id = id.as_ref();
            let k = match spec.class_index(id) {
                Some(k) => k,
                None => {
                    let j = spec
                        .queue_index(id)
                        .ok_or_else(|| Error::UnknownId(id.to_string()))?;
                    queue_classes[j][0]
                }
            };
            out.class_counts[k] = *n;
        }
        Ok(out)
    }

    pub fn total(&self) -> u64 {
        self.class_counts.iter().sum()
    }
}

/// Cumulative counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// External arrivals per class (`E`).
    pub external: Vec<u64>,
    /// All arrivals per class (`A`).
    pub arrivals: Vec<u64>,
    /// Departures per class (`D`).
    pub departures: Vec<u64>,
    /// `routed[k][k']` jobs sent from class k to k'; the last column counts exits.
    pub routed: Vec<Vec<u64>>,
    /// Capped service granted per queue (`Pi`).
    pub service: Vec<u64>,
}

#[derive(Clone, Debug)]
enum RouteRow {
    Fixed(Option<usize>),
    /// Cumulative probabilities over destinations; the remainder is exit.
    Draw(Vec<(usize, f64)>),
}

/// Mutable state of one run.
#[derive(Clone, Debug)]
pub struct SimState {
    pub t: u64,
    /// Arrival sequence numbers per class, oldest at the front.
    buffers: Vec<VecDeque<u64>>,
    next_seq: u64,
    pub queue_len: Vec<u64>,
    pub class_len: Vec<u64>,
    pub initial_class_len: Vec<u64>,
    pub counters: Counters,
}

impl SimState {
    fn new(spec: &NetworkSpec, init: &InitialState) -> Result<Self> {
        let nk = spec.num_classes();
        if init.class_counts.len() != nk {
            return Err(Error::DimensionMismatch {
                expected: nk,
                found: init.class_counts.len(),
            });
        }
        let mut buffers = vec![VecDeque::new(); nk];
        let mut next_seq = 0;
        for (k, &n) in init.class_counts.iter().enumerate() {
            buffers[k].extend(next_seq..next_seq + n);
            next_seq += n;
        }
        let class_len = init.class_counts.clone();
        Ok(Self {
            t: 0,
            buffers,
            next_seq,
            queue_len: spec.sum_by_queue(&class_len),
            class_len: class_len.clone(),
            initial_class_len: class_len,
            counters: Counters {
                external: vec![0; nk],
                arrivals: vec![0; nk],
                departures: vec![0; nk],
                routed: vec![vec![0; nk + 1]; nk],
                service: vec![0; spec.num_queues()],
            },
        })
    }

    pub fn total(&self) -> u64 {
        self.queue_len.iter().sum()
    }

    /// Arrival sequence number of the oldest job of class `k`.
    pub fn head_seq(&self, k: usize) -> Option<u64> {
        self.buffers.get(k)?.front().copied()
    }

    /// Largest per-class `|Q(t) - Q(0) - A(t) + D(t)|`, also checked against
    /// the buffers themselves; zero when flows are conserved.
    pub fn flow_residual(&self) -> u64 {
        let c = &self.counters;
        (0..self.class_len.len())
            .map(|k| {
                let expect = i128::from(self.initial_class_len[k]) + i128::from(c.arrivals[k])
                    - i128::from(c.departures[k]);
                let a = (i128::from(self.class_len[k]) - expect).unsigned_abs();
                let b = (self.buffers[k].len() as i128 - expect).unsigned_abs();
                a.max(b) as u64
            })
            .max()
            .unwrap_or(0)
    }

    fn push(&mut self, k: usize, queue: usize) {
        self.buffers[k].push_back(self.next_seq);
        self.next_seq += 1;
        self.class_len[k] += 1;
        self.queue_len[queue] += 1;
        self.counters.arrivals[k] += 1;
    }
}

/// A single run: spec, resolved policy, state and the four random streams.
pub struct Simulator<'a> {
    spec: &'a NetworkSpec,
    scheduler: Scheduler,
    state: SimState,
    queue_classes: Vec<Vec<usize>>,
    class_queue: Vec<usize>,
    service_prob: Vec<f64>,
    routes: Vec<RouteRow>,
    sampler: ArrivalSampler,
    rng_arrivals: ChaCha8Rng,
    rng_service: ChaCha8Rng,
    rng_routing: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
    completed: Vec<usize>,
    incoming: Vec<usize>,
    last_schedule: Schedule,
}

impl<'a> Simulator<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        policy: &PolicyConfig,
        init: &InitialState,
        seed: u64,
    ) -> Result<Self> {
        let violations = validate_spec(spec);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let scheduler = policy.resolve(spec)?;
        let state = SimState::new(spec, init)?;
        let nk = spec.num_classes();
        let routes = spec
            .routing
            .iter()
            .map(|row| {
                let dests: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(k, p)| (k, *p))
                    .collect();
                if dests.is_empty() {
                    RouteRow::Fixed(None)
                } else if dests.len() == 1 && dests[0].1 >= 1.0 {
                    RouteRow::Fixed(Some(dests[0].0))
                } else {
                    let mut cum = 0.0;
                    RouteRow::Draw(
                        dests
                            .into_iter()
                            .map(|(k, p)| {
                                cum += p;
                                (k, cum)
                            })
                            .collect(),
                    )
                }
            })
            .collect();
        Ok(Self {
            spec,
            scheduler,
            state,
            queue_classes: spec.queue_classes(),
            class_queue: spec.classes.iter().map(|c| c.queue).collect(),
            service_prob: spec.service_probs(),
            routes,
            sampler: ArrivalSampler::new(spec),
            rng_arrivals: substream(seed, STREAM_ARRIVALS),
            rng_service: substream(seed, STREAM_SERVICE),
            rng_routing: substream(seed, STREAM_ROUTING),
            rng_policy: substream(policy.seed.unwrap_or(seed), STREAM_POLICY),
            completed: Vec::with_capacity(nk),
            incoming: Vec::with_capacity(nk),
            last_schedule: Schedule::zero(spec.num_queues()),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    pub fn policy_kind(&self) -> PolicyKind {
        self.scheduler.kind()
    }

    /// Schedule used in the most recent step (before capping).
    pub fn last_schedule(&self) -> &Schedule {
        &self.last_schedule
    }

    /// Advances one time step.
    pub fn step(&mut self) {
        let schedule = self.scheduler.schedule(
            &self.state.queue_len,
            &self.state.class_len,
            &mut self.rng_policy,
        );
        self.completed.clear();

        match &schedule.class_split {
            Some(split) => {
                for (k, &units) in split.iter().enumerate() {
                    let units = u64::from(units).min(self.state.class_len[k]);
                    if units == 0 {
                        continue;
                    }
                    self.state.counters.service[self.class_queue[k]] += units;
                    for _ in 0..units {
                        if self.try_complete(k) {
                            self.pop_head(k);
                        }
                    }
                }
            }
            None => {
                for (j, &units) in schedule.sigma.iter().enumerate() {
                    let units = u64::from(units).min(self.state.queue_len[j]);
                    if units == 0 {
                        continue;
                    }
                    self.state.counters.service[j] += units;
                    for _ in 0..units {
                        let Some(k) = self.head_class(j) else { break };
                        if self.try_complete(k) {
                            self.pop_head(k);
                        }
                    }
                }
            }
        }

        self.incoming.clear();
        for i in 0..self.completed.len() {
            let k = self.completed[i];
            let dest = match &self.routes[k] {
                RouteRow::Fixed(d) => *d,
                RouteRow::Draw(cum) => {
                    let u: f64 = self.rng_routing.gen();
                    cum.iter().find(|(_, c)| u < *c).map(|(d, _)| *d)
                }
            };
            let nk = self.state.class_len.len();
            self.state.counters.routed[k][dest.unwrap_or(nk)] += 1;
            if let Some(d) = dest {
                self.incoming.push(d);
            }
        }
        let routed_count = self.incoming.len();
        self.sampler
            .sample(&mut self.rng_arrivals, &mut self.incoming);
        for i in 0..self.incoming.len() {
            let k = self.incoming[i];
            self.state.push(k, self.class_queue[k]);
            if i >= routed_count {
                self.state.counters.external[k] += 1;
            }
        }

        self.state.t += 1;
        self.last_schedule = schedule;
        if cfg!(debug_assertions) || self.state.t % RELEASE_CHECK_EVERY == 0 {
            let r = self.state.flow_residual();
            assert_eq!(r, 0, "flow conservation violated at t={}", self.state.t);
        }
    }

    fn head_class(&self, j: usize) -> Option<usize> {
        let classes = &self.queue_classes[j];
        if classes.len() == 1 {
            let k = classes[0];
            return (!self.state.buffers[k].is_empty()).then_some(k);
        }
        classes
            .iter()
            .filter_map(|&k| self.state.buffers[k].front().map(|&s| (s, k)))
            .min()
            .map(|(_, k)| k)
    }

    fn try_complete(&mut self, k: usize) -> bool {
        let p = self.service_prob[k];
        p >= 1.0 || self.rng_service.gen::<f64>() < p
    }

    fn pop_head(&mut self, k: usize) {
        self.state.buffers[k]
            .pop_front()
            .expect("served class is nonempty");
        self.state.class_len[k] -= 1;
        self.state.queue_len[self.class_queue[k]] -= 1;
        self.state.counters.departures[k] += 1;
        self.completed.push(k);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: u64,
    pub record_every: u64,
    pub seed: u64,
    #[serde(default)]
    pub record_classes: bool,
    #[serde(default)]
    pub record_schedules: bool,
}

impl SimConfig {
    pub fn new(steps: u64, record_every: u64, seed: u64) -> Self {
        Self {
            steps,
            record_every,
            seed,
            record_classes: false,
            record_schedules: false,
        }
    }
}

/// Recorded queue lengths, row-major with one row per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub queue_ids: Vec<String>,
    /// Empty unless per-class lengths were recorded.
    pub class_ids: Vec<String>,
    pub times: Vec<u64>,
    pub queues: Vec<u32>,
    pub classes: Vec<u32>,
    pub totals: Vec<u64>,
    /// Schedules chosen at the recorded steps (if requested).
    pub schedules: Vec<Vec<u32>>,
}

fn narrow(x: u64) -> u32 {
    u32::try_from(x).expect("queue length exceeds u32 range")
}

impl Trajectory {
    pub fn new(queue_ids: Vec<String>) -> Self {
        Self {
            queue_ids,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_queues(&self) -> usize {
        self.queue_ids.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let n = self.queue_ids.len();
        &self.queues[i * n..(i + 1) * n]
    }

    pub fn class_row(&self, i: usize) -> Option<&[u32]> {
        let n = self.class_ids.len();
        (n > 0).then(|| &self.classes[i * n..(i + 1) * n])
    }

    /// Appends one sample; `times` must stay strictly increasing.
    pub fn push(&mut self, t: u64, queues: &[u64], classes: Option<&[u64]>) {
        assert_eq!(queues.len(), self.queue_ids.len());
        if let Some(&last) = self.times.last() {
            assert!(t > last, "sample times must increase");
        }
        self.times.push(t);
        self.queues.extend(queues.iter().map(|&x| narrow(x)));
        self.totals.push(queues.iter().sum());
        if let Some(c) = classes {
            self.classes.extend(c.iter().map(|&x| narrow(x)));
        }
    }

    pub fn final_total(&self) -> u64 {
        self.totals.last().copied().unwrap_or(0)
    }

    /// CSV with header `t,<queue ids>,total[,<class ids>]`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.queue_ids.iter().cloned());
        header.push("total".into());
        header.extend(self.class_ids.iter().cloned());
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            use std::fmt::Write as _;
            line.clear();
            write!(line, "{}", self.times[i]).unwrap();
            for q in self.row(i) {
                write!(line, ",{q}").unwrap();
            }
            write!(line, ",{}", self.totals[i]).unwrap();
            if let Some(c) = self.class_row(i) {
                for x in c {
                    write!(line, ",{x}").unwrap();
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: u64,
    pub policy: PolicyKind,
    pub queue_ids: Vec<String>,
    pub final_queues: Vec<u64>,
    pub initial_total: u64,
    pub final_total: u64,
    pub min_total: u64,
    pub max_total: u64,
    pub wall_time_secs: f64,
}

pub struct SimRun {
    pub trajectory: Trajectory,
    pub summary: SimSummary,
    pub state: SimState,
}

/// Runs `config.steps` steps, recording step 0, every `record_every`-th step
/// and the final step.
pub fn run(
    spec: &NetworkSpec,
    policy: &PolicyConfig,
    init: &InitialState,
    config: &SimConfig,
) -> Result<SimRun> {
    if config.steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if config.record_every == 0 {
        return Err(Error::InvalidParameter(
            "record_every must be at least 1".into(),
        ));
    }
    let started = Instant::now();
    let mut sim = Simulator::new(spec, policy, init, config.seed)?;
    let mut traj = Trajectory::new(spec.queues.clone());
    if config.record_classes {
        traj.class_ids = spec.classes.iter().map(|c| c.id.clone()).collect();
    }
    let record = |sim: &Simulator, traj: &mut Trajectory| {
        let st = sim.state();
        traj.push(
            st.t,
            &st.queue_len,
            config.record_classes.then_some(st.class_len.as_slice()),
        );
        if config.record_schedules {
            traj.schedules.push(sim.last_schedule().sigma.clone());
        }
    };
    record(&sim, &mut traj);
    let initial_total = sim.state().total();
    let (mut min_total, mut max_total) = (initial_total, initial_total);
    for _ in 0..config.steps {
        sim.step();
        let total = sim.state().total();
        min_total = min_total.min(total);
        max_total = max_total.max(total);
        let t = sim.state().t;
        if t % config.record_every == 0 || t == config.steps {
            record(&sim, &mut traj);
        }
    }
    let state = sim.state().clone();
    let summary = SimSummary {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        steps: config.steps,
        policy: sim.policy_kind(),
        queue_ids: spec.queues.clone(),
        final_queues: state.queue_len.clone(),
        initial_total,
        final_total: state.total(),
        min_total,
        max_total,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(SimRun {
        trajectory: traj,
        summary,
        state,
    })
}
