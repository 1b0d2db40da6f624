//! Scheduling policies: queue (and class) lengths in, feasible schedule out.
//!
//! Policies return the raw schedule. Capping at the available work is the
//! simulation engine's job.

use std::cmp::Ordering;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::analysis::traffic_solve;
use crate::error::{Error, Result};
use crate::network::{units_within, NetworkSpec, Schedule, ScheduleSet, FEASIBILITY_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    MaxWeight,
    WeightedMaxWeight,
    LargestClassWeightedMaxWeight,
    LqfsBatch,
    BackPressure,
    ProportionalScheduler,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    Lexicographic,
    SeededRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKeyword {
    /// Reciprocal traffic intensities from the traffic equations.
    #[serde(rename = "auto_rho")]
    AutoRho,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Explicit(Vec<f64>),
    Keyword(WeightKeyword),
}

impl WeightSpec {
    pub const AUTO_RHO: WeightSpec = WeightSpec::Keyword(WeightKeyword::AutoRho);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Per-queue weights (weighted MaxWeight, LQFS batch sizes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
    /// Per-class weights for the largest-class policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<WeightSpec>,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Overrides the seed of the policy random stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            weights: None,
            class_weights: None,
            tie_break: TieBreak::Lexicographic,
            seed: None,
        }
    }

    pub fn max_weight() -> Self {
        Self::new(PolicyKind::MaxWeight)
    }

    pub fn weighted(weights: WeightSpec) -> Self {
        Self {
            weights: Some(weights),
            ..Self::new(PolicyKind::WeightedMaxWeight)
        }
    }

    pub fn largest_class(class_weights: WeightSpec) -> Self {
        Self {
            class_weights: Some(class_weights),
            ..Self::new(PolicyKind::LargestClassWeightedMaxWeight)
        }
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    /// Checks kind/weight consistency and builds a ready-to-run scheduler.
    pub fn resolve(&self, spec: &NetworkSpec) -> Result<Scheduler> {
        let nq = spec.num_queues();
        let nk = spec.num_classes();
        let needs_weights = matches!(
            self.kind,
            PolicyKind::WeightedMaxWeight | PolicyKind::LqfsBatch
        );
        let needs_class_weights = self.kind == PolicyKind::LargestClassWeightedMaxWeight;
        if needs_weights != self.weights.is_some() {
            return Err(Error::InvalidParameter(format!(
                "policy {:?} {} per-queue weights",
                self.kind,
                if needs_weights {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        if needs_class_weights != self.class_weights.is_some() {
            return Err(Error::InvalidParameter(format!(
                "policy {:?} {} per-class weights",
                self.kind,
                if needs_class_weights {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        if self.kind == PolicyKind::BackPressure && !spec.is_single_class() {
            return Err(Error::InvalidParameter(
                "back-pressure is implemented for single-class networks only".into(),
            ));
        }

        let weights = match &self.weights {
            None => vec![1.0; nq],
            Some(w) => resolve_weights(
                w,
                spec,
                nq,
                |t| t.rho_queue.clone(),
                |j| spec.queues[j].clone(),
            )?,
        };
        let class_weights = match &self.class_weights {
            None => vec![1.0; nk],
            Some(w) => resolve_weights(
                w,
                spec,
                nk,
                |t| t.rho_class.clone(),
                |k| spec.classes[k].id.clone(),
            )?,
        };

        let solver = SetSolver::new(&spec.schedule_set)?;
        if self.kind == PolicyKind::ProportionalScheduler
            && !matches!(solver, SetSolver::Knapsack(_))
        {
            return Err(Error::UnsupportedSet(
                "the proportional scheduler needs the constraint form".into(),
            ));
        }
        let class_queue = spec.classes.iter().map(|c| c.queue).collect();
        Ok(Scheduler {
            kind: self.kind,
            weights,
            class_weights,
            tie_break: self.tie_break,
            solver,
            routing: spec.routing.clone(),
            class_queue,
            values: vec![0.0; nq],
        })
    }
}

fn resolve_weights(
    w: &WeightSpec,
    spec: &NetworkSpec,
    n: usize,
    pick_rho: impl Fn(&crate::analysis::TrafficSolution) -> Vec<f64>,
    name: impl Fn(usize) -> String,
) -> Result<Vec<f64>> {
    let out = match w {
        WeightSpec::Explicit(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            v.clone()
        }
        WeightSpec::Keyword(WeightKeyword::AutoRho) => {
            let rho = pick_rho(&traffic_solve(spec)?);
            rho.iter()
                .enumerate()
                .map(|(i, &r)| {
                    if r > 0.0 {
                        Ok(1.0 / r)
                    } else {
                        Err(Error::ZeroTraffic { queue: name(i) })
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if let Some(bad) = out.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "weights must be positive and finite (got {bad})"
        )));
    }
    Ok(out)
}

/// How ties among maximizers are broken.
pub enum Tie<'a> {
    /// Smallest schedule in lexicographic order.
    Lexicographic,
    Random(&'a mut dyn RngCore),
}

impl Tie<'_> {
    fn pick(&mut self, n: usize) -> Option<usize> {
        match self {
            Tie::Lexicographic => None,
            Tie::Random(rng) => Some(rng.gen_range(0..n)),
        }
    }
}

/// A resolved policy with its argmax machinery precomputed.
#[derive(Clone, Debug)]
pub struct Scheduler {
    kind: PolicyKind,
    weights: Vec<f64>,
    class_weights: Vec<f64>,
    tie_break: TieBreak,
    solver: SetSolver,
    routing: Vec<Vec<f64>>,
    class_queue: Vec<usize>,
    values: Vec<f64>,
}

impl Scheduler {
    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    /// Schedule for queue lengths `q` and class lengths `q_class`.
    pub fn schedule(&mut self, q: &[u64], q_class: &[u64], rng: &mut dyn RngCore) -> Schedule {
        if self.kind == PolicyKind::ProportionalScheduler {
            let SetSolver::Knapsack(rows) = &self.solver else {
                unreachable!("checked in resolve")
            };
            return Schedule::from_sigma(proportional_core(q, rows, rng));
        }
        let mut tie = match self.tie_break {
            TieBreak::Lexicographic => Tie::Lexicographic,
            TieBreak::SeededRandom => Tie::Random(&mut *rng),
        };
        match self.kind {
            PolicyKind::MaxWeight | PolicyKind::WeightedMaxWeight | PolicyKind::LqfsBatch => {
                for (v, (&qj, &w)) in self.values.iter_mut().zip(q.iter().zip(&self.weights)) {
                    *v = w * qj as f64;
                }
                Schedule::from_sigma(self.solver.argmax(&self.values, &mut tie))
            }
            PolicyKind::BackPressure => {
                for j in 0..q.len() {
                    let downstream: f64 = self.routing[j]
                        .iter()
                        .zip(q)
                        .map(|(p, &qn)| p * qn as f64)
                        .sum();
                    self.values[j] = (q[j] as f64 - downstream).max(0.0);
                }
                let mut sigma = self.solver.argmax(&self.values, &mut tie);
                for (s, v) in sigma.iter_mut().zip(&self.values) {
                    if *v <= 0.0 {
                        *s = 0;
                    }
                }
                Schedule::from_sigma(sigma)
            }
            PolicyKind::LargestClassWeightedMaxWeight => {
                let (sigma, split) = largest_class_core(
                    q_class,
                    &self.class_weights,
                    &self.class_queue,
                    &self.solver,
                    &mut self.values,
                    &mut tie,
                );
                Schedule {
                    sigma,
                    class_split: Some(split),
                }
            }
            PolicyKind::ProportionalScheduler => unreachable!(),
        }
    }
}

/// Maximizes `sum_j w_j Q_j sigma_j` over the schedule set.
///
/// Constraint sets with disjoint supports are solved exactly per constraint
/// (an integer knapsack); explicit sets by full scan.
pub fn max_weight_schedule(
    q: &[u64],
    set: &ScheduleSet,
    weights: &[f64],
    tie: &mut Tie<'_>,
) -> Result<Schedule> {
    check_dim(set.dim(), q.len())?;
    check_dim(set.dim(), weights.len())?;
    let values: Vec<f64> = q
        .iter()
        .zip(weights)
        .map(|(&qj, w)| w * qj as f64)
        .collect();
    Ok(Schedule::from_sigma(
        SetSolver::new(set)?.argmax(&values, tie),
    ))
}

/// Objective `sum_j w_j Q_j sigma_j` of a schedule.
pub fn objective(q: &[u64], weights: &[f64], sigma: &[u32]) -> f64 {
    q.iter()
        .zip(weights)
        .zip(sigma)
        .map(|((&qj, w), &s)| w * qj as f64 * f64::from(s))
        .sum()
}

/// Largest-class weighted MaxWeight: every queue is weighted by its largest
/// `w_k Qtilde_k`, and all its service goes to that class.
pub fn largest_class_schedule(
    q_class: &[u64],
    class_weights: &[f64],
    spec: &NetworkSpec,
    tie: &mut Tie<'_>,
) -> Result<Schedule> {
    check_dim(spec.num_classes(), q_class.len())?;
    check_dim(spec.num_classes(), class_weights.len())?;
    let solver = SetSolver::new(&spec.schedule_set)?;
    let class_queue: Vec<usize> = spec.classes.iter().map(|c| c.queue).collect();
    let mut values = vec![0.0; spec.num_queues()];
    let (sigma, split) = largest_class_core(
        q_class,
        class_weights,
        &class_queue,
        &solver,
        &mut values,
        tie,
    );
    Ok(Schedule {
        sigma,
        class_split: Some(split),
    })
}

fn largest_class_core(
    q_class: &[u64],
    class_weights: &[f64],
    class_queue: &[usize],
    solver: &SetSolver,
    values: &mut [f64],
    tie: &mut Tie<'_>,
) -> (Vec<u32>, Vec<u32>) {
    let nq = values.len();
    let mut best_class: Vec<Option<usize>> = vec![None; nq];
    values.iter_mut().for_each(|v| *v = 0.0);
    // Ties between classes go to the highest index, the lexicographically
    // smallest class split.
    for (k, (&qk, &w)) in q_class.iter().zip(class_weights).enumerate() {
        if qk == 0 {
            continue;
        }
        let j = class_queue[k];
        let v = w * qk as f64;
        if best_class[j].is_none() || v >= values[j] {
            values[j] = v;
            best_class[j] = Some(k);
        }
    }
    let sigma = solver.argmax(values, tie);
    let mut split = vec![0; q_class.len()];
    for (j, &s) in sigma.iter().enumerate() {
        if let Some(k) = best_class[j] {
            split[k] = s;
        }
    }
    (sigma, split)
}

/// Back-pressure: maximizes `sum_j sigma_j (Q_j - sum_j' P_jj' Q_j')`, never
/// serving a queue whose differential backlog is nonpositive.
pub fn back_pressure_schedule(
    q: &[u64],
    spec: &NetworkSpec,
    tie: &mut Tie<'_>,
) -> Result<Schedule> {
    if !spec.is_single_class() {
        return Err(Error::InvalidParameter(
            "back-pressure is implemented for single-class networks only".into(),
        ));
    }
    check_dim(spec.num_queues(), q.len())?;
    let values: Vec<f64> = (0..q.len())
        .map(|j| {
            let downstream: f64 = spec.routing[j]
                .iter()
                .zip(q)
                .map(|(p, &qn)| p * qn as f64)
                .sum();
            (q[j] as f64 - downstream).max(0.0)
        })
        .collect();
    let mut sigma = SetSolver::new(&spec.schedule_set)?.argmax(&values, tie);
    for (s, v) in sigma.iter_mut().zip(&values) {
        if *v <= 0.0 {
            *s = 0;
        }
    }
    Ok(Schedule::from_sigma(sigma))
}

/// Continuous maximizer of `sum_j Q_j log sigma_j` over the relaxed set: each
/// constraint's budget is split in proportion to the queue lengths it covers.
pub fn proportional_target(q: &[u64], set: &ScheduleSet) -> Result<Vec<f64>> {
    check_dim(set.dim(), q.len())?;
    let SetSolver::Knapsack(rows) = SetSolver::new(set)? else {
        return Err(Error::UnsupportedSet(
            "the proportional scheduler needs the constraint form".into(),
        ));
    };
    Ok(proportional_target_rows(q, &rows))
}

fn proportional_target_rows(q: &[u64], rows: &[RowPlan]) -> Vec<f64> {
    let mut target = vec![0.0; q.len()];
    for row in rows {
        let total: u64 = row.items().map(|(j, _)| q[j]).sum();
        if total == 0 {
            continue;
        }
        for (j, c) in row.items() {
            target[j] = (q[j] as f64 / total as f64) / c;
        }
    }
    target
}

/// Proportional scheduler with randomized rounding of the continuous target.
///
/// Per constraint, each queue gets the floor of its target plus one extra unit
/// with probability equal to the fractional part (systematic sampling, so the
/// marginals are exact). If the rounded-up units overshoot the budget, the
/// most expensive extras are dropped.
pub fn proportional_schedule(
    q: &[u64],
    set: &ScheduleSet,
    rng: &mut dyn RngCore,
) -> Result<Schedule> {
    check_dim(set.dim(), q.len())?;
    let SetSolver::Knapsack(rows) = SetSolver::new(set)? else {
        return Err(Error::UnsupportedSet(
            "the proportional scheduler needs the constraint form".into(),
        ));
    };
    Ok(Schedule::from_sigma(proportional_core(q, &rows, rng)))
}

fn proportional_core(q: &[u64], rows: &[RowPlan], rng: &mut dyn RngCore) -> Vec<u32> {
    let target = proportional_target_rows(q, rows);
    let mut sigma = vec![0u32; q.len()];
    for row in rows {
        let mut used = 0.0;
        let mut extras: Vec<(usize, f64)> = Vec::new();
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (j, c) in row.items() {
            let t = target[j];
            if t <= 0.0 {
                continue;
            }
            let base = t.floor();
            sigma[j] = base as u32;
            used += base * c;
            let frac = t - base;
            // unit is taken when an integer shift of u falls inside [cum, cum + frac)
            let before = (cum - u).ceil();
            cum += frac;
            if (cum - u).ceil() > before {
                extras.push((j, c));
            }
        }
        extras.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
        for (j, c) in extras {
            if used + c <= 1.0 + FEASIBILITY_TOL {
                sigma[j] += 1;
                used += c;
            }
        }
    }
    sigma
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

// ---------------------------------------------------------------------------
// argmax machinery

#[derive(Clone, Debug)]
pub(crate) enum SetSolver {
    Knapsack(Vec<RowPlan>),
    Scan {
        dim: usize,
        schedules: Vec<Vec<u32>>,
    },
}

/// Items of one constraint grouped by equal cost.
#[derive(Clone, Debug)]
pub(crate) struct RowPlan {
    groups: Vec<CostGroup>,
}

#[derive(Clone, Debug)]
struct CostGroup {
    cost: f64,
    /// Queue indices, ascending.
    items: Vec<usize>,
}

impl RowPlan {
    pub(crate) fn items(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.groups
            .iter()
            .flat_map(|g| g.items.iter().map(move |&j| (j, g.cost)))
    }
}

impl SetSolver {
    pub(crate) fn new(set: &ScheduleSet) -> Result<Self> {
        match set {
            ScheduleSet::Explicit { dim, schedules } => Ok(SetSolver::Scan {
                dim: *dim,
                schedules: schedules.clone(),
            }),
            ScheduleSet::Constraints { dim, rows } => {
                let owner = set.row_of_queue()?;
                if let Some(j) = owner.iter().position(Option::is_none) {
                    return Err(Error::UnboundedQueue {
                        queue: format!("#{j}"),
                    });
                }
                let _ = dim;
                let plans = rows
                    .iter()
                    .map(|row| {
                        let mut groups: Vec<CostGroup> = Vec::new();
                        for j in row.support() {
                            let c = row.coeffs[j];
                            match groups
                                .iter_mut()
                                .find(|g| (g.cost - c).abs() <= 1e-12 * c.max(g.cost))
                            {
                                Some(g) => g.items.push(j),
                                None => groups.push(CostGroup {
                                    cost: c,
                                    items: vec![j],
                                }),
                            }
                        }
                        RowPlan { groups }
                    })
                    .collect();
                Ok(SetSolver::Knapsack(plans))
            }
        }
    }

    pub(crate) fn argmax(&self, values: &[f64], tie: &mut Tie<'_>) -> Vec<u32> {
        match self {
            SetSolver::Knapsack(rows) => {
                let mut sigma = vec![0u32; values.len()];
                for row in rows {
                    solve_row(row, values, tie, &mut sigma);
                }
                sigma
            }
            SetSolver::Scan { dim, schedules } => scan(*dim, schedules, values, tie),
        }
    }
}

fn tol(best: f64) -> f64 {
    if !best.is_finite() {
        return 0.0;
    }
    1e-9 * best.abs().max(1.0)
}

fn lex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    a.cmp(b)
}

fn scan(dim: usize, schedules: &[Vec<u32>], values: &[f64], tie: &mut Tie<'_>) -> Vec<u32> {
    let value = |s: &[u32]| -> f64 { s.iter().zip(values).map(|(&x, v)| f64::from(x) * v).sum() };
    let best = schedules.iter().map(|s| value(s)).fold(0.0, f64::max);
    let mut ties: Vec<&Vec<u32>> = schedules
        .iter()
        .filter(|s| value(s) >= best - tol(best))
        .collect();
    if ties.is_empty() {
        return vec![0; dim];
    }
    if let Some(i) = tie.pick(ties.len()) {
        return ties[i].clone();
    }
    ties.sort_by(|a, b| lex_cmp(a, b));
    ties[0].clone()
}

/// Exact integer knapsack for one constraint `sum_j c_j sigma_j <= 1`.
///
/// Within a cost group only the most valuable item can be worth serving, so
/// the search runs over per-group unit counts with a fractional bound. All
/// optimal count vectors are kept for tie-breaking.
fn solve_row(row: &RowPlan, values: &[f64], tie: &mut Tie<'_>, sigma: &mut [u32]) {
    let mut cands: Vec<(f64, f64, usize)> = Vec::with_capacity(row.groups.len());
    for g in &row.groups {
        let best = g
            .items
            .iter()
            .map(|&j| values[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if !(best > 0.0) {
            continue;
        }
        let tied: Vec<usize> = g
            .items
            .iter()
            .copied()
            .filter(|&j| values[j] >= best - tol(best))
            .collect();
        // the last tied item gives the lexicographically smallest schedule
        let item = match tie.pick(tied.len()) {
            Some(i) => tied[i],
            None => *tied.last().expect("nonempty"),
        };
        cands.push((g.cost, values[item], item));
    }
    if cands.is_empty() {
        return;
    }
    cands.sort_by(|a, b| {
        (b.1 / b.0)
            .partial_cmp(&(a.1 / a.0))
            .unwrap_or(Ordering::Equal)
    });

    let mut search = Search {
        cands: &cands,
        counts: vec![0; cands.len()],
        best: f64::NEG_INFINITY,
        optima: Vec::new(),
    };
    search.descend(0, 1.0, 0.0);
    let cutoff = search.best - tol(search.best);
    let optima: Vec<Vec<u32>> = search
        .optima
        .into_iter()
        .filter(|(v, _)| *v >= cutoff)
        .map(|(_, c)| c)
        .collect();

    let chosen = match tie.pick(optima.len()) {
        Some(i) => &optima[i],
        None => {
            // compare by queue index order
            let keyed = |counts: &Vec<u32>| -> Vec<(usize, u32)> {
                let mut v: Vec<(usize, u32)> =
                    cands.iter().zip(counts).map(|(c, &n)| (c.2, n)).collect();
                v.sort_unstable();
                v
            };
            optima
                .iter()
                .min_by(|a, b| {
                    let (ka, kb) = (keyed(a), keyed(b));
                    ka.iter().map(|x| x.1).cmp(kb.iter().map(|x| x.1))
                })
                .expect("zero schedule is always a candidate")
        }
    };
    for (c, &n) in cands.iter().zip(chosen) {
        sigma[c.2] = n;
    }
}

struct Search<'a> {
    cands: &'a [(f64, f64, usize)],
    counts: Vec<u32>,
    best: f64,
    optima: Vec<(f64, Vec<u32>)>,
}

impl Search<'_> {
    fn descend(&mut self, g: usize, budget: f64, value: f64) {
        if g == self.cands.len() {
            if value > self.best + tol(self.best) {
                self.best = value;
                let cutoff = value - tol(value);
                self.optima.retain(|(v, _)| *v >= cutoff);
            }
            if value >= self.best - tol(self.best) {
                self.optima.push((value, self.counts.clone()));
            }
            return;
        }
        let (cost, val, _) = self.cands[g];
        if value + budget.max(0.0) * (val / cost) < self.best - tol(self.best) {
            return;
        }
        let top = units_within(budget, cost);
        for n in (0..=top).rev() {
            self.counts[g] = n;
            self.descend(
                g + 1,
                budget - f64::from(n) * cost,
                value + f64::from(n) * val,
            );
        }
        self.counts[g] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{enumerate_maximal_schedules, ArrivalStream, ClassSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lex() -> Tie<'static> {
        Tie::Lexicographic
    }

    #[test]
    fn dominant_queue_explicit() {
        let set = ScheduleSet::explicit(2, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        let s = max_weight_schedule(&[3, 1], &set, &[1.0, 1.0], &mut lex()).unwrap();
        assert_eq!(s.sigma, vec![1, 0]);
    }

    #[test]
    fn hub_beats_spread_small_component() {
        // sigma_0 + (1/2)(sigma_1 + sigma_2 + sigma_3) <= 1
        let set = ScheduleSet::constraints(4, vec![vec![1.0, 0.5, 0.5, 0.5]]);
        let q = [10, 2, 2, 2];
        let s = max_weight_schedule(&q, &set, &[1.0; 4], &mut lex()).unwrap();
        assert_eq!(s.sigma, vec![1, 0, 0, 0]);
        let oracle = enumerate_maximal_schedules(&set, 100)
            .unwrap()
            .iter()
            .map(|s| objective(&q, &[1.0; 4], s))
            .fold(0.0, f64::max);
        assert_eq!(objective(&q, &[1.0; 4], &s.sigma), oracle);
    }

    #[test]
    fn empty_system_gives_zero_schedule() {
        let set = ScheduleSet::constraints(3, vec![vec![1.0, 0.5, 0.5]]);
        let s = max_weight_schedule(&[0, 0, 0], &set, &[1.0; 3], &mut lex()).unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn greedy_ratio_is_not_enough() {
        // ratio order favours the 0.4-cost item, but one unit of the other wins
        let set = ScheduleSet::constraints(2, vec![vec![0.5, 0.4]]);
        let s = max_weight_schedule(&[100, 85], &set, &[1.0, 1.0], &mut lex()).unwrap();
        assert_eq!(objective(&[100, 85], &[1.0, 1.0], &s.sigma), 200.0);
        assert_eq!(s.sigma, vec![2, 0]);
    }

    #[test]
    fn ties_prefer_lexicographically_smallest() {
        let set = ScheduleSet::constraints(3, vec![vec![1.0, 0.5, 0.5]]);
        // hub 4 vs two spread units worth 2 each: tie, (0,0,2) is smallest
        let s = max_weight_schedule(&[4, 2, 2], &set, &[1.0; 3], &mut lex()).unwrap();
        assert_eq!(s.sigma, vec![0, 0, 2]);
    }

    #[test]
    fn overlapping_supports_are_rejected() {
        let set = ScheduleSet::constraints(2, vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert!(matches!(
            max_weight_schedule(&[1, 1], &set, &[1.0; 2], &mut lex()),
            Err(Error::OverlappingConstraints { .. })
        ));
        assert!(matches!(
            max_weight_schedule(&[1], &set, &[1.0], &mut lex()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn one_queue_two_classes() -> NetworkSpec {
        NetworkSpec {
            queues: vec!["q".into()],
            classes: vec![
                ClassSpec {
                    id: "k1".into(),
                    queue: 0,
                    service_prob: 1.0,
                },
                ClassSpec {
                    id: "k2".into(),
                    queue: 0,
                    service_prob: 1.0,
                },
            ],
            arrivals: vec![],
            routing: vec![vec![0.0; 2]; 2],
            schedule_set: ScheduleSet::unit_simplex(1),
        }
    }

    #[test]
    fn largest_class_examples() {
        let spec = one_queue_two_classes();
        let s = largest_class_schedule(&[4, 1], &[1.0, 1.0], &spec, &mut lex()).unwrap();
        assert_eq!(s.class_split, Some(vec![1, 0]));
        // rho = (8, 1): 4/8 < 1/1
        let s = largest_class_schedule(&[4, 1], &[1.0 / 8.0, 1.0], &spec, &mut lex()).unwrap();
        assert_eq!(s.class_split, Some(vec![0, 1]));
        let s = largest_class_schedule(&[0, 0], &[1.0, 1.0], &spec, &mut lex()).unwrap();
        assert!(s.is_zero());
        assert_eq!(s.class_split, Some(vec![0, 0]));
    }

    fn two_tandem(set: ScheduleSet) -> NetworkSpec {
        NetworkSpec {
            queues: vec!["1".into(), "2".into()],
            classes: vec![
                ClassSpec {
                    id: "1".into(),
                    queue: 0,
                    service_prob: 1.0,
                },
                ClassSpec {
                    id: "2".into(),
                    queue: 1,
                    service_prob: 1.0,
                },
            ],
            arrivals: vec![ArrivalStream {
                rate: 0.5,
                classes: vec![0],
            }],
            routing: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            schedule_set: set,
        }
    }

    #[test]
    fn back_pressure_examples() {
        let spec = two_tandem(ScheduleSet::constraints(
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        ));
        let s = back_pressure_schedule(&[5, 0], &spec, &mut lex()).unwrap();
        assert_eq!(s.sigma, vec![1, 0]);
        let spec = two_tandem(ScheduleSet::unit_simplex(2));
        let s = back_pressure_schedule(&[2, 5], &spec, &mut lex()).unwrap();
        assert_eq!(s.sigma, vec![0, 1]);
        assert!(back_pressure_schedule(&[0, 0], &spec, &mut lex())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn proportional_examples() {
        let set = ScheduleSet::unit_simplex(2);
        assert_eq!(proportional_target(&[1, 1], &set).unwrap(), vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut firsts = 0;
        for _ in 0..4000 {
            let s = proportional_schedule(&[1, 1], &set, &mut rng).unwrap();
            assert_eq!(s.sigma.iter().sum::<u32>(), 1);
            firsts += s.sigma[0];
        }
        assert!((firsts as f64 / 4000.0 - 0.5).abs() < 0.04, "{firsts}");
        let s = proportional_schedule(&[3, 0], &set, &mut rng).unwrap();
        assert_eq!(s.sigma, vec![1, 0]);
        assert!(proportional_schedule(&[0, 0], &set, &mut rng)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn proportional_rounding_keeps_budget() {
        let set = ScheduleSet::constraints(3, vec![vec![0.4, 0.3, 0.25]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let s = proportional_schedule(&[5, 2, 9], &set, &mut rng).unwrap();
            assert!(set.contains(&s.sigma), "{:?}", s.sigma);
        }
    }

    #[test]
    fn config_weight_consistency() {
        let spec = two_tandem(ScheduleSet::unit_simplex(2));
        assert!(PolicyConfig::new(PolicyKind::WeightedMaxWeight)
            .resolve(&spec)
            .is_err());
        let s = PolicyConfig::weighted(WeightSpec::AUTO_RHO)
            .resolve(&spec)
            .unwrap();
        assert_eq!(s.weights(), &[2.0, 2.0]);
        let json =
            r#"{"kind":"weighted_max_weight","weights":"auto_rho","tie_break":"seeded_random"}"#;
        let cfg: PolicyConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.weights, Some(WeightSpec::AUTO_RHO));
        assert_eq!(cfg.tie_break, TieBreak::SeededRandom);
        let json = r#"{"kind":"lqfs_batch","weights":[1.0,0.5]}"#;
        let cfg: PolicyConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.weights, Some(WeightSpec::Explicit(vec![1.0, 0.5])));
    }
}
