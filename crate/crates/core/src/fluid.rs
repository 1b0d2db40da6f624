//! Deterministic fluid model integrated with explicit Euler steps, plus the
//! Lyapunov monitors used to certify its decay.
//!
//! Only single-class networks with constraint-form schedule sets are handled.
//! The service vector maximizes `sum_j w_j Q_j x_j` over the relaxed polytope
//! `{x >= 0 : <c_r, x> <= 1}`, so each constraint spends its whole budget on
//! its best queue (highest index on ties, the lexicographic vertex). Empty
//! queues may take the budget of an otherwise idle constraint, which makes the
//! empty state a fixed point of the Euler map.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{traffic_solve, TrafficSolution};
use crate::error::{Error, Result};
use crate::network::{validate_spec, NetworkSpec, SCHEMA_VERSION};
use crate::policy::{RowPlan, SetSolver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub t: f64,
    pub q: Vec<f64>,
    /// Cumulative arrivals, departures and scheduled service per queue.
    pub arrived: Vec<f64>,
    pub departed: Vec<f64>,
    pub served: Vec<f64>,
    /// Departure rate used over the last step (after capping).
    pub rate: Vec<f64>,
    /// Uncapped rate `p_j x_j` of the maximizing vertex at the current
    /// levels; this is the `D'` entering the Lyapunov decomposition.
    pub service_rate: Vec<f64>,
}

impl FluidState {
    pub fn new(q0: Vec<f64>) -> Self {
        let n = q0.len();
        Self {
            t: 0.0,
            q: q0,
            arrived: vec![0.0; n],
            departed: vec![0.0; n],
            served: vec![0.0; n],
            rate: vec![0.0; n],
            service_rate: vec![0.0; n],
        }
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovKind {
    /// `max_x sum_j Q_j (x_j / rho_j - 1)`.
    H,
    /// `sum_j Q_j D'_j / lambda_j`.
    F,
    /// `sum_j Q_j`.
    G,
    /// `max_x sum_j Q_j (x_j - rho_j)`.
    GBranch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReading {
    pub t: f64,
    pub total: f64,
    pub h: f64,
    pub f: f64,
    pub g: f64,
    pub g_branch: f64,
    /// `(h(t) - h(t - dt)) / dt`; zero at the first reading.
    pub left_derivative_estimate: f64,
    /// `|Q(t) - Q(t - dt)|_1 / dt`; zero at the first reading.
    pub path_speed: f64,
}

impl LyapunovReading {
    pub fn get(&self, which: LyapunovKind) -> f64 {
        match which {
            LyapunovKind::H => self.h,
            LyapunovKind::F => self.f,
            LyapunovKind::G => self.g,
            LyapunovKind::GBranch => self.g_branch,
        }
    }
}

/// Precomputed fluid dynamics for one spec and weight vector.
#[derive(Clone, Debug)]
pub struct FluidModel {
    queues: Vec<String>,
    a: Vec<f64>,
    p: Vec<f64>,
    routing: Vec<Vec<f64>>,
    rows: Vec<RowPlan>,
    weights: Vec<f64>,
    traffic: TrafficSolution,
}

impl FluidModel {
    pub fn new(spec: &NetworkSpec, weights: &[f64]) -> Result<Self> {
        let violations = validate_spec(spec);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        if !spec.is_single_class() {
            return Err(Error::InvalidParameter(
                "the fluid model needs a single-class network".into(),
            ));
        }
        let n = spec.num_queues();
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter(
                "fluid weights must be positive".into(),
            ));
        }
        let SetSolver::Knapsack(rows) = SetSolver::new(&spec.schedule_set)? else {
            return Err(Error::UnsupportedSet(
                "the fluid model needs the constraint form".into(),
            ));
        };
        Ok(Self {
            queues: spec.queues.clone(),
            a: spec.arrival_rates(),
            p: spec.service_probs(),
            routing: spec.routing.clone(),
            rows,
            weights: weights.to_vec(),
            traffic: traffic_solve(spec)?,
        })
    }

    pub fn traffic(&self) -> &TrafficSolution {
        &self.traffic
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest rate at which any single queue can drain.
    pub fn max_drain_rate(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.items())
            .map(|(j, c)| self.p[j] / c)
            .fold(0.0, f64::max)
    }

    /// Maximizing vertex of `sum_j v_j x_j` over the relaxed polytope.
    fn vertex(&self, values: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.a.len()];
        for row in &self.rows {
            let mut best: Option<(usize, f64, f64)> = None;
            for (j, c) in row.items() {
                let v = values(j);
                if v < 0.0 {
                    continue;
                }
                let score = v / c;
                match best {
                    Some((i, s, _)) if score < s || (score == s && j < i) => {}
                    _ => best = Some((j, score, c)),
                }
            }
            if let Some((j, _, c)) = best {
                x[j] = 1.0 / c;
            }
        }
        x
    }

    /// Relaxed weighted-MaxWeight service vector for fluid levels `q`.
    pub fn argmax(&self, q: &[f64]) -> Vec<f64> {
        self.vertex(|j| self.weights[j] * q[j])
    }

    fn service_rate(&self, q: &[f64]) -> Vec<f64> {
        self.argmax(q)
            .iter()
            .zip(&self.p)
            .map(|(s, p)| s * p)
            .collect()
    }

    /// State at `t = 0` with `service_rate` filled in.
    pub fn initial_state(&self, q0: &[f64]) -> FluidState {
        let mut s = FluidState::new(q0.to_vec());
        s.service_rate = self.service_rate(q0);
        s
    }

    fn max_over_polytope(&self, values: impl Fn(usize) -> f64) -> f64 {
        self.rows
            .iter()
            .map(|row| row.items().map(|(j, c)| values(j) / c).fold(0.0, f64::max))
            .sum()
    }

    /// Service units per queue for one step. Each constraint walks its
    /// queues in argmax order and gives each one what it can use (content
    /// plus inflow over the step) before passing the rest of its budget on.
    fn allocate(&self, q: &[f64], inflow: &[f64], dt: f64) -> Vec<f64> {
        let mut x = vec![0.0; q.len()];
        for row in &self.rows {
            let mut order: Vec<(usize, f64)> = row.items().collect();
            let score = |j: usize, c: f64| self.weights[j] * q[j] / c;
            order.sort_by(|&(i, ci), &(j, cj)| {
                score(j, cj).total_cmp(&score(i, ci)).then(j.cmp(&i))
            });
            let mut budget = 1.0f64;
            for (j, c) in order {
                if budget <= 0.0 {
                    break;
                }
                let usable = (q[j] / dt + inflow[j]) / self.p[j];
                let units = (budget / c).min(usable);
                x[j] = units;
                budget -= units * c;
            }
        }
        x
    }

    pub fn step(&self, state: &FluidState, dt: f64) -> Result<FluidState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive (got {dt})"
            )));
        }
        let n = self.a.len();

        // inflows depend on upstream departures; iterate to a fixed point
        let mut inflow = self.a.clone();
        let mut x = self.allocate(&state.q, &inflow, dt);
        let mut d: Vec<f64> = x.iter().zip(&self.p).map(|(s, p)| s * p).collect();
        for _ in 0..=n + 1 {
            self.inflow(&d, &mut inflow);
            let nx = self.allocate(&state.q, &inflow, dt);
            if nx == x {
                break;
            }
            x = nx;
            d = x.iter().zip(&self.p).map(|(s, p)| s * p).collect();
        }
        // final cap so that no level goes negative over the step
        for _ in 0..=n + 1 {
            self.inflow(&d, &mut inflow);
            let mut changed = false;
            for j in 0..n {
                let cap = state.q[j] / dt + inflow[j];
                if d[j] > cap {
                    d[j] = cap;
                    x[j] = cap / self.p[j];
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        self.inflow(&d, &mut inflow);

        let mut next = state.clone();
        next.t += dt;
        for j in 0..n {
            next.q[j] = (state.q[j] + dt * (inflow[j] - d[j])).max(0.0);
            next.arrived[j] += dt * inflow[j];
            next.departed[j] += dt * d[j];
            next.served[j] += dt * x[j];
        }
        next.rate = d;
        next.service_rate = self.service_rate(&next.q);
        Ok(next)
    }

    fn inflow(&self, d: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
        for (i, &di) in d.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            for (j, p) in self.routing[i].iter().enumerate() {
                out[j] += di * p;
            }
        }
    }

    /// Evaluates one Lyapunov function at `state`.
    pub fn lyapunov(&self, state: &FluidState, which: LyapunovKind) -> Result<f64> {
        let rho = &self.traffic.rho_queue;
        let lambda = &self.traffic.lambda;
        let q = &state.q;
        for j in 0..q.len() {
            if q[j] > 0.0 && rho[j] <= 0.0 {
                return Err(Error::ZeroTraffic {
                    queue: self.queues[j].clone(),
                });
            }
        }
        let ratio = |j: usize, num: f64, den: f64| if q[j] > 0.0 { q[j] * num / den } else { 0.0 };
        Ok(match which {
            LyapunovKind::G => q.iter().sum(),
            LyapunovKind::H => {
                self.max_over_polytope(|j| ratio(j, 1.0, rho[j])) - q.iter().sum::<f64>()
            }
            LyapunovKind::F => (0..q.len())
                .map(|j| ratio(j, state.service_rate[j], lambda[j]))
                .sum(),
            LyapunovKind::GBranch => {
                self.max_over_polytope(|j| q[j])
                    - q.iter().zip(rho).map(|(x, r)| x * r).sum::<f64>()
            }
        })
    }

    /// Readings at `state`; `previous` is the state one step earlier.
    pub fn reading(
        &self,
        state: &FluidState,
        previous: Option<(&FluidState, &LyapunovReading)>,
    ) -> Result<LyapunovReading> {
        let h = self.lyapunov(state, LyapunovKind::H)?;
        let (left_derivative_estimate, path_speed) = match previous {
            Some((ps, pr)) if state.t > pr.t => {
                let span = state.t - pr.t;
                let moved: f64 = state.q.iter().zip(&ps.q).map(|(x, y)| (x - y).abs()).sum();
                ((h - pr.h) / span, moved / span)
            }
            _ => (0.0, 0.0),
        };
        Ok(LyapunovReading {
            t: state.t,
            total: state.total(),
            h,
            f: self.lyapunov(state, LyapunovKind::F)?,
            g: self.lyapunov(state, LyapunovKind::G)?,
            g_branch: self.lyapunov(state, LyapunovKind::GBranch)?,
            left_derivative_estimate,
            path_speed,
        })
    }
}

/// One Euler step of the fluid model.
pub fn fluid_step(
    state: &FluidState,
    spec: &NetworkSpec,
    weights: &[f64],
    dt: f64,
) -> Result<FluidState> {
    FluidModel::new(spec, weights)?.step(state, dt)
}

/// Evaluates one Lyapunov function. `lambda` supplies the traffic rates; the
/// state's `service_rate` supplies `D'` for [`LyapunovKind::F`].
pub fn lyapunov_eval(
    state: &FluidState,
    spec: &NetworkSpec,
    lambda: &[f64],
    which: LyapunovKind,
) -> Result<f64> {
    let n = spec.num_queues();
    if lambda.len() != n || state.q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: lambda.len().min(state.q.len()),
        });
    }
    let mut model = FluidModel::new(spec, &vec![1.0; n])?;
    model.traffic.lambda = lambda.to_vec();
    model.traffic.rho_queue = lambda.iter().zip(&model.p).map(|(l, p)| l / p).collect();
    model.lyapunov(state, which)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidRun {
    pub schema_version: u32,
    pub dt: f64,
    pub queue_ids: Vec<String>,
    /// States at `t = 0`, every `state_every` steps and at the end.
    pub states: Vec<FluidState>,
    /// One reading per step.
    pub readings: Vec<LyapunovReading>,
    /// Time at which the total fell below `empty_threshold`.
    pub emptied_at: Option<f64>,
    pub empty_threshold: f64,
}

impl FluidRun {
    /// CSV `t,<queue ids>,total,h,f,g,g_branch`, one row per stored state.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,{},total,h,f,g,g_branch", self.queue_ids.join(","))?;
        let mut r = 0;
        for s in &self.states {
            while r + 1 < self.readings.len() && self.readings[r].t < s.t - 1e-12 {
                r += 1;
            }
            let rd = &self.readings[r];
            let qs: Vec<String> = s.q.iter().map(|x| format!("{x:.9}")).collect();
            writeln!(
                w,
                "{:.6},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
                s.t,
                qs.join(","),
                s.total(),
                rd.h,
                rd.f,
                rd.g,
                rd.g_branch
            )?;
        }
        Ok(())
    }
}

/// Integrates from `q0` (with `|q0|_1 <= 1`) until `t_max` or until the total
/// drops below `dt` times the largest drain rate.
pub fn fluid_run(
    spec: &NetworkSpec,
    weights: &[f64],
    q0: &[f64],
    dt: f64,
    t_max: f64,
) -> Result<FluidRun> {
    fluid_run_with(&FluidModel::new(spec, weights)?, q0, dt, t_max, 100)
}

pub fn fluid_run_with(
    model: &FluidModel,
    q0: &[f64],
    dt: f64,
    t_max: f64,
    state_every: usize,
) -> Result<FluidRun> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive (got {dt})"
        )));
    }
    if q0.len() != model.a.len() {
        return Err(Error::DimensionMismatch {
            expected: model.a.len(),
            found: q0.len(),
        });
    }
    if q0.iter().any(|x| !(*x >= 0.0)) || q0.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(
            "initial fluid levels must be >= 0 with total <= 1".into(),
        ));
    }
    let empty_threshold = dt * model.max_drain_rate();
    let mut state = model.initial_state(q0);
    let mut run = FluidRun {
        schema_version: SCHEMA_VERSION,
        dt,
        queue_ids: model.queues.clone(),
        states: vec![state.clone()],
        readings: Vec::new(),
        emptied_at: None,
        empty_threshold,
    };
    if state.total() < empty_threshold {
        run.emptied_at = Some(0.0);
        return Ok(run);
    }
    run.readings.push(model.reading(&state, None)?);
    let steps = (t_max / dt).ceil() as usize;
    for i in 1..=steps {
        let next = model.step(&state, dt)?;
        let rd = model.reading(
            &next,
            Some((&state, run.readings.last().expect("nonempty"))),
        )?;
        state = next;
        run.readings.push(rd);
        let done = state.total() < empty_threshold;
        if i % state_every.max(1) == 0 || i == steps || done {
            run.states.push(state.clone());
        }
        if done {
            run.emptied_at = Some(state.t);
            break;
        }
    }
    Ok(run)
}

/// Default certificate interval in time units. Shorter intervals pick up the
/// switching between tied vertices rather than the trend.
pub const DEFAULT_CERTIFICATE_WINDOW: f64 = 0.5;

/// Number of readings spanning `time` at step `dt` (at least one).
pub fn window_readings(time: f64, dt: f64) -> usize {
    ((time / dt).round() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub schema_version: u32,
    pub monitored: LyapunovKind,
    /// Required decay rate: slopes must not exceed `-bound + tolerance`.
    pub bound: f64,
    pub tolerance: f64,
    pub lipschitz_estimate: f64,
    /// Readings per checked interval.
    pub window: usize,
    pub intervals_checked: usize,
    pub worst_slope: f64,
    pub worst_interval: [f64; 2],
    pub pass: bool,
}

/// Checks that the monitored function falls at rate at least `bound` on
/// every interval of `window` consecutive steps while the network is nonempty.
///
/// The tolerance is `10 dt L`, with `L` the observed Lipschitz constant of
/// the fluid path (largest `path_speed`).
pub fn decay_rate_certificate(
    readings: &[LyapunovReading],
    which: LyapunovKind,
    bound: f64,
    window: usize,
) -> CertificateReport {
    let window = window.max(1);
    let lipschitz = readings.iter().map(|r| r.path_speed).fold(0.0, f64::max);
    let dt = readings
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .fold(f64::INFINITY, f64::min);
    let dt = if dt.is_finite() { dt } else { 0.0 };
    let tolerance = 10.0 * dt * lipschitz;

    let mut worst_slope = f64::NEG_INFINITY;
    let mut worst_interval = [0.0, 0.0];
    let mut checked = 0;
    let mut i = 0;
    while i + 1 < readings.len() {
        let end = (i + window).min(readings.len() - 1);
        let seg = &readings[i..=end];
        if seg.iter().all(|r| r.total > 0.0) {
            let span = seg[seg.len() - 1].t - seg[0].t;
            let slope = (seg[seg.len() - 1].get(which) - seg[0].get(which)) / span;
            checked += 1;
            if slope > worst_slope {
                worst_slope = slope;
                worst_interval = [seg[0].t, seg[seg.len() - 1].t];
            }
        }
        i = end;
    }
    CertificateReport {
        schema_version: SCHEMA_VERSION,
        monitored: which,
        bound,
        tolerance,
        lipschitz_estimate: lipschitz,
        window,
        intervals_checked: checked,
        worst_slope,
        worst_interval,
        pass: checked > 0 && worst_slope <= -bound + tolerance,
    }
}

/// Distance, in the max norm, from `rho` to the outer face of the relaxed
/// capacity region: `min_r (1 - <c_r, rho>) / |c_r|_1`.
pub fn absolute_margin(spec: &NetworkSpec, traffic: &TrafficSolution) -> Result<f64> {
    let SetSolver::Knapsack(rows) = SetSolver::new(&spec.schedule_set)? else {
        return Err(Error::UnsupportedSet(
            "absolute margin needs the constraint form".into(),
        ));
    };
    Ok(rows
        .iter()
        .map(|row| {
            let (load, norm) = row.items().fold((0.0, 0.0), |(l, n), (j, c)| {
                (l + c * traffic.rho_queue[j], n + c)
            });
            (1.0 - load) / norm
        })
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::build_tandem;
    use crate::network::ScheduleSet;

    #[test]
    fn single_queue_linear_drain() {
        let spec = build_tandem(1, 0.0, None).unwrap();
        let dt = 1e-3;
        let run = fluid_run(&spec, &[1.0], &[1.0], dt, 3.0);
        // zero arrivals: rho = 0, so h is undefined for a loaded queue
        assert!(matches!(run, Err(Error::ZeroTraffic { .. })));
        let model = FluidModel::new(&spec, &[1.0]).unwrap();
        let mut s = FluidState::new(vec![1.0]);
        while s.t < 0.5 - 1e-12 {
            s = model.step(&s, dt).unwrap();
        }
        assert!((s.q[0] - 0.5).abs() < 2.0 * dt);
        while s.t < 1.5 {
            s = model.step(&s, dt).unwrap();
        }
        assert_eq!(s.q[0], 0.0);
    }

    #[test]
    fn two_queue_tandem_emptying_time() {
        fn empty_time(spec: &NetworkSpec) -> f64 {
            let model = FluidModel::new(spec, &[1.0, 1.0]).unwrap();
            let dt = 1e-3;
            let mut s = FluidState::new(vec![1.0, 0.0]);
            let threshold = dt * model.max_drain_rate();
            while s.total() >= threshold {
                s = model.step(&s, dt).unwrap();
                assert!(s.t < 3.0);
            }
            s.t
        }
        let dt = 1e-3;
        // one shared server: every unit of mass is processed twice
        let mut shared = build_tandem(2, 0.0, None).unwrap();
        shared.schedule_set = ScheduleSet::constraints(2, vec![vec![1.0, 1.0]]);
        let t = empty_time(&shared);
        assert!((t - 2.0).abs() <= 2.0 * dt + 1e-9, "emptied at {t}");
        // separate servers: the second station keeps pace with the first
        let t = empty_time(&build_tandem(2, 0.0, None).unwrap());
        assert!((t - 1.0).abs() <= 2.0 * dt + 1e-9, "emptied at {t}");
    }

    #[test]
    fn empty_start_has_no_readings() {
        let spec = build_tandem(3, 0.5, None).unwrap();
        let run = fluid_run(&spec, &[1.0; 3], &[0.0; 3], 1e-3, 1.0).unwrap();
        assert_eq!(run.emptied_at, Some(0.0));
        assert!(run.readings.is_empty());
    }

    #[test]
    fn balanced_flow_gives_zero_h() {
        let spec = build_tandem(3, 0.5, None).unwrap();
        let mut s = FluidState::new(vec![0.2, 0.3, 0.1]);
        s.service_rate = vec![0.5; 3];
        let lambda = [0.5; 3];
        let f = lyapunov_eval(&s, &spec, &lambda, LyapunovKind::F).unwrap();
        let g = lyapunov_eval(&s, &spec, &lambda, LyapunovKind::G).unwrap();
        assert!((f - g).abs() < 1e-12);
        let zero = FluidState::new(vec![0.0; 3]);
        for k in [LyapunovKind::H, LyapunovKind::F, LyapunovKind::G] {
            assert_eq!(lyapunov_eval(&zero, &spec, &lambda, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn bad_dt() {
        let spec = build_tandem(1, 0.5, None).unwrap();
        assert!(fluid_step(&FluidState::new(vec![0.5]), &spec, &[1.0], 0.0).is_err());
    }
}
