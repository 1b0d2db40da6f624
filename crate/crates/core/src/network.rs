//! Switched queueing network descriptions.
//!
//! A [`NetworkSpec`] fixes the queues, the job classes living at each queue,
//! the external arrival streams, geometric service parameters, the class-level
//! routing matrix and the [`ScheduleSet`] of feasible service vectors.
//! Identifiers are strings in the JSON document; internally everything is
//! addressed by dense indices in declaration order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when testing `<c, sigma> <= 1` in floating point.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Current version of every JSON document emitted by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub id: String,
    /// Index of the owning queue.
    pub queue: usize,
    /// Per-unit completion probability `p_k` of the geometric job size.
    pub service_prob: f64,
}

/// A Bernoulli(`rate`) external arrival per time step, dispatched uniformly
/// over `classes`. A single-class stream is an ordinary Bernoulli source; a
/// multi-class stream gives each of its `n` classes mean rate `rate / n` while
/// keeping at most one arrival per step across the whole group.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalStream {
    pub rate: f64,
    pub classes: Vec<usize>,
}

/// One resource constraint `<coeffs, sigma> <= 1` over queues.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn load(&self, sigma: &[u32]) -> f64 {
        self.coeffs
            .iter()
            .zip(sigma)
            .map(|(c, &s)| c * f64::from(s))
            .sum()
    }

    pub fn load_f64(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(c, s)| c * s).sum()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(j, _)| j)
    }
}

/// The feasible schedules, either listed or given by resource constraints.
#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleSet {
    Explicit {
        dim: usize,
        schedules: Vec<Vec<u32>>,
    },
    Constraints {
        dim: usize,
        rows: Vec<Constraint>,
    },
}

impl ScheduleSet {
    pub fn explicit(dim: usize, schedules: Vec<Vec<u32>>) -> Self {
        ScheduleSet::Explicit { dim, schedules }
    }

    pub fn constraints(dim: usize, rows: Vec<Vec<f64>>) -> Self {
        ScheduleSet::Constraints {
            dim,
            rows: rows.into_iter().map(Constraint::new).collect(),
        }
    }

    /// `sum_j sigma_j <= 1` over `dim` queues.
    pub fn unit_simplex(dim: usize) -> Self {
        Self::constraints(dim, vec![vec![1.0; dim]])
    }

    pub fn dim(&self) -> usize {
        match self {
            ScheduleSet::Explicit { dim, .. } | ScheduleSet::Constraints { dim, .. } => *dim,
        }
    }

    pub fn contains(&self, sigma: &[u32]) -> bool {
        if sigma.len() != self.dim() {
            return false;
        }
        match self {
            ScheduleSet::Explicit { schedules, .. } => schedules.iter().any(|s| s == sigma),
            ScheduleSet::Constraints { rows, .. } => {
                rows.iter().all(|r| r.load(sigma) <= 1.0 + FEASIBILITY_TOL)
            }
        }
    }

    /// For constraint sets with pairwise disjoint supports, the row owning
    /// each queue (`None` for queues no row mentions).
    pub fn row_of_queue(&self) -> Result<Vec<Option<usize>>> {
        let ScheduleSet::Constraints { dim, rows } = self else {
            return Err(Error::UnsupportedSet(
                "row ownership is only defined for the constraint form".into(),
            ));
        };
        let mut owner = vec![None; *dim];
        for (r, row) in rows.iter().enumerate() {
            for j in row.support() {
                if owner[j].is_some() {
                    return Err(Error::OverlappingConstraints {
                        queue: format!("#{j}"),
                    });
                }
                owner[j] = Some(r);
            }
        }
        Ok(owner)
    }

    /// Largest feasible service at queue `j` when every other queue gets none.
    pub fn max_units(&self, j: usize) -> Option<u32> {
        match self {
            ScheduleSet::Explicit { schedules, .. } => schedules.iter().map(|s| s[j]).max(),
            ScheduleSet::Constraints { rows, .. } => rows
                .iter()
                .filter(|r| r.coeffs[j] > 0.0)
                .map(|r| units_within(1.0, r.coeffs[j]))
                .min(),
        }
    }
}

/// Number of whole units of cost `c` fitting in `budget`, tolerating rounding.
pub(crate) fn units_within(budget: f64, c: f64) -> u32 {
    if budget < -FEASIBILITY_TOL {
        return 0;
    }
    let raw = ((budget + FEASIBILITY_TOL) / c).floor();
    if raw <= 0.0 {
        0
    } else if raw >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        raw as u32
    }
}

/// A service vector over queues, optionally refined to classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub sigma: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_split: Option<Vec<u32>>,
}

impl Schedule {
    pub fn zero(queues: usize) -> Self {
        Self {
            sigma: vec![0; queues],
            class_split: None,
        }
    }

    pub fn from_sigma(sigma: Vec<u32>) -> Self {
        Self {
            sigma,
            class_split: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0)
    }
}

/// Immutable description of a switched queueing network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub queues: Vec<String>,
    pub classes: Vec<ClassSpec>,
    pub arrivals: Vec<ArrivalStream>,
    /// Class-to-class routing probabilities; row residual is the exit probability.
    pub routing: Vec<Vec<f64>>,
    pub schedule_set: ScheduleSet,
}

impl NetworkSpec {
    pub fn num_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_single_class(&self) -> bool {
        self.classes.len() == self.queues.len()
            && self.classes.iter().enumerate().all(|(k, c)| c.queue == k)
    }

    pub fn queue_index(&self, id: &str) -> Option<usize> {
        self.queues.iter().position(|q| q == id)
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    pub fn queue_classes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.queues.len()];
        for (k, c) in self.classes.iter().enumerate() {
            if c.queue < out.len() {
                out[c.queue].push(k);
            }
        }
        out
    }

    /// Mean external arrivals per step for each class.
    pub fn arrival_rates(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.classes.len()];
        for s in &self.arrivals {
            let share = s.rate / s.classes.len() as f64;
            for &k in &s.classes {
                a[k] += share;
            }
        }
        a
    }

    pub fn service_probs(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.service_prob).collect()
    }

    pub fn exit_prob(&self, k: usize) -> f64 {
        (1.0 - self.routing[k].iter().sum::<f64>()).max(0.0)
    }

    /// Sums a per-class vector into a per-queue vector.
    pub fn sum_by_queue<T>(&self, per_class: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::AddAssign,
    {
        let mut out = vec![T::default(); self.queues.len()];
        for (k, c) in self.classes.iter().enumerate() {
            out[c.queue] += per_class[k];
        }
        out
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(s)?;
        Self::try_from(doc)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SpecDocument::from(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// A single invariant violation found by [`validate_spec`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Returns every invariant violation of `spec`; an empty list means valid.
pub fn validate_spec(spec: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let nq = spec.queues.len();
    let nk = spec.classes.len();

    if nq == 0 {
        out.push(Violation::new("queues", "network has no queues"));
    }
    let mut seen = HashSet::new();
    for q in &spec.queues {
        if !seen.insert(q.as_str()) {
            out.push(Violation::new(format!("queues[{q}]"), "duplicate queue id"));
        }
    }
    let mut seen = HashSet::new();
    for c in &spec.classes {
        if !seen.insert(c.id.as_str()) {
            out.push(Violation::new(
                format!("classes[{}]", c.id),
                "duplicate class id",
            ));
        }
        if c.queue >= nq {
            out.push(Violation::new(
                format!("classes[{}].queue", c.id),
                format!("queue index {} out of range", c.queue),
            ));
        }
        if !(c.service_prob > 0.0 && c.service_prob <= 1.0) {
            out.push(Violation::new(
                format!("service[{}]", c.id),
                format!("completion probability {} outside (0, 1]", c.service_prob),
            ));
        }
    }
    for (j, classes) in spec.queue_classes().iter().enumerate() {
        if classes.is_empty() {
            out.push(Violation::new(
                format!("queues[{}]", spec.queues[j]),
                "queue owns no class",
            ));
        }
    }

    let mut fed = vec![false; nk];
    for (i, s) in spec.arrivals.iter().enumerate() {
        if !(0.0..=1.0).contains(&s.rate) {
            out.push(Violation::new(
                format!("arrivals[{i}].rate"),
                format!("rate {} outside [0, 1]", s.rate),
            ));
        }
        if s.classes.is_empty() {
            out.push(Violation::new(
                format!("arrivals[{i}]"),
                "stream has no classes",
            ));
        }
        for &k in &s.classes {
            if k >= nk {
                out.push(Violation::new(
                    format!("arrivals[{i}]"),
                    format!("class index {k} out of range"),
                ));
            } else if std::mem::replace(&mut fed[k], true) {
                out.push(Violation::new(
                    format!("arrivals[{i}]"),
                    format!(
                        "class {} is fed by more than one stream",
                        spec.classes[k].id
                    ),
                ));
            }
        }
    }

    let mut routing_ok = spec.routing.len() == nk;
    if !routing_ok {
        out.push(Violation::new(
            "routing",
            format!("expected {nk} rows, found {}", spec.routing.len()),
        ));
    }
    for (k, row) in spec.routing.iter().enumerate() {
        let name = spec
            .classes
            .get(k)
            .map_or_else(|| format!("#{k}"), |c| c.id.clone());
        if row.len() != nk {
            routing_ok = false;
            out.push(Violation::new(
                format!("routing[{name}]"),
                format!("expected {nk} entries, found {}", row.len()),
            ));
            continue;
        }
        if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            routing_ok = false;
            out.push(Violation::new(
                format!("routing[{name}]"),
                format!("entry {p} outside [0, 1]"),
            ));
        }
        let sum: f64 = row.iter().sum();
        if sum > 1.0 + 1e-12 {
            routing_ok = false;
            out.push(Violation::new(
                format!("routing[{name}]"),
                format!("row sum {sum} exceeds 1"),
            ));
        }
    }
    if routing_ok && nk > 0 {
        let radius = spectral_radius(&spec.routing);
        if radius >= 1.0 - 1e-12 {
            out.push(Violation::new(
                "routing",
                format!("spectral radius {radius} >= 1: network is not open"),
            ));
        }
    }

    validate_schedule_set(spec, &mut out);
    out
}

fn validate_schedule_set(spec: &NetworkSpec, out: &mut Vec<Violation>) {
    let nq = spec.queues.len();
    let set = &spec.schedule_set;
    if set.dim() != nq {
        out.push(Violation::new(
            "schedule_set",
            format!("dimension {} does not match {nq} queues", set.dim()),
        ));
        return;
    }
    match set {
        ScheduleSet::Explicit { schedules, .. } => {
            let members: HashSet<&[u32]> = schedules.iter().map(Vec::as_slice).collect();
            if let Some(bad) = schedules.iter().find(|s| s.len() != nq) {
                out.push(Violation::new(
                    "schedule_set",
                    format!("schedule {bad:?} has wrong length"),
                ));
                return;
            }
            if !members.contains(vec![0; nq].as_slice()) {
                out.push(Violation::new("schedule_set", "zero schedule is missing"));
            }
            for s in schedules {
                if let Some(missing) = first_missing_dominated(s, &members) {
                    out.push(Violation::new(
                        "schedule_set",
                        format!("not downward closed: {s:?} is present but {missing:?} is not"),
                    ));
                }
            }
            for j in 0..nq {
                if schedules.iter().all(|s| s[j] == 0) {
                    continue;
                }
            }
        }
        ScheduleSet::Constraints { rows, .. } => {
            for (r, row) in rows.iter().enumerate() {
                if row.coeffs.len() != nq {
                    out.push(Violation::new(
                        format!("schedule_set.rows[{r}]"),
                        "wrong number of coefficients",
                    ));
                    return;
                }
                if let Some(c) = row.coeffs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                    out.push(Violation::new(
                        format!("schedule_set.rows[{r}]"),
                        format!("coefficient {c} must be finite and >= 0"),
                    ));
                }
            }
            for j in 0..nq {
                if rows
                    .iter()
                    .all(|r| r.coeffs.get(j).copied().unwrap_or(0.0) <= 0.0)
                {
                    out.push(Violation::new(
                        format!("schedule_set[{}]", spec.queues[j]),
                        "queue is unbounded: no constraint has a positive coefficient on it",
                    ));
                }
            }
        }
    }
}

/// First componentwise-dominated vector of `s` absent from `members`.
fn first_missing_dominated(s: &[u32], members: &HashSet<&[u32]>) -> Option<Vec<u32>> {
    let mut cur = vec![0u32; s.len()];
    loop {
        if !members.contains(cur.as_slice()) {
            return Some(cur);
        }
        // odometer increment bounded by s
        let mut i = 0;
        loop {
            if i == s.len() {
                return None;
            }
            if cur[i] < s[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = 0;
            i += 1;
        }
    }
}

pub(crate) fn spectral_radius(p: &[Vec<f64>]) -> f64 {
    let n = p.len();
    let m = DMatrix::from_fn(n, n, |i, j| p[i][j]);
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Lists the maximal (undominated) feasible integer schedules, refusing with
/// [`Error::Explosion`] once more than `dim_limit` have been found.
pub fn enumerate_maximal_schedules(set: &ScheduleSet, dim_limit: usize) -> Result<Vec<Vec<u32>>> {
    match set {
        ScheduleSet::Explicit { schedules, .. } => {
            let maximal: Vec<Vec<u32>> = schedules
                .iter()
                .filter(|s| {
                    !schedules
                        .iter()
                        .any(|o| o != *s && o.iter().zip(s.iter()).all(|(a, b)| a >= b))
                })
                .cloned()
                .collect();
            if maximal.len() > dim_limit {
                return Err(Error::Explosion { limit: dim_limit });
            }
            Ok(maximal)
        }
        ScheduleSet::Constraints { dim, rows } => {
            for j in 0..*dim {
                if rows.iter().all(|r| r.coeffs[j] <= 0.0) {
                    return Err(Error::UnboundedQueue {
                        queue: format!("#{j}"),
                    });
                }
            }
            let mut walk = MaximalWalk {
                rows,
                usage: vec![0.0; rows.len()],
                cur: vec![0; *dim],
                out: Vec::new(),
                limit: dim_limit,
                nodes: 0,
                node_budget: dim_limit.saturating_mul(256).saturating_add(1 << 20),
            };
            walk.descend(0)?;
            Ok(walk.out)
        }
    }
}

struct MaximalWalk<'a> {
    rows: &'a [Constraint],
    usage: Vec<f64>,
    cur: Vec<u32>,
    out: Vec<Vec<u32>>,
    limit: usize,
    nodes: usize,
    node_budget: usize,
}

impl MaximalWalk<'_> {
    fn headroom(&self, j: usize) -> u32 {
        self.rows
            .iter()
            .zip(&self.usage)
            .filter(|(r, _)| r.coeffs[j] > 0.0)
            .map(|(r, u)| units_within(1.0 - u, r.coeffs[j]))
            .min()
            .unwrap_or(u32::MAX)
    }

    fn descend(&mut self, j: usize) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_budget {
            return Err(Error::Explosion { limit: self.limit });
        }
        if j == self.cur.len() {
            if (0..self.cur.len()).all(|i| self.headroom(i) == 0) {
                self.out.push(self.cur.clone());
                if self.out.len() > self.limit {
                    return Err(Error::Explosion { limit: self.limit });
                }
            }
            return Ok(());
        }
        let top = self.headroom(j);
        for v in (0..=top).rev() {
            self.cur[j] = v;
            for (r, u) in self.rows.iter().zip(self.usage.iter_mut()) {
                *u += r.coeffs[j] * f64::from(v);
            }
            let res = self.descend(j + 1);
            for (r, u) in self.rows.iter().zip(self.usage.iter_mut()) {
                *u -= r.coeffs[j] * f64::from(v);
            }
            res?;
        }
        self.cur[j] = 0;
        Ok(())
    }
}

/// Stretches a schedule set componentwise by `m`: `{(m_1 s_1, ..., m_n s_n)}`.
///
/// Explicit sets need integral factors; constraint sets divide each
/// coefficient `c_j` by `m_j`.
pub fn scale_schedule_set(set: &ScheduleSet, m: &[f64]) -> Result<ScheduleSet> {
    if m.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: m.len(),
        });
    }
    if let Some((index, &value)) = m
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(Error::InvalidScale { index, value });
    }
    match set {
        ScheduleSet::Explicit { dim, schedules } => {
            let factors = m
                .iter()
                .map(|&v| {
                    let r = v.round();
                    if (v - r).abs() <= 1e-12 && r <= f64::from(u32::MAX) {
                        Ok(r as u32)
                    } else {
                        Err(Error::InvalidParameter(format!(
                            "explicit schedule sets scale only by integers (got {v})"
                        )))
                    }
                })
                .collect::<Result<Vec<u32>>>()?;
            let schedules = schedules
                .iter()
                .map(|s| s.iter().zip(&factors).map(|(a, b)| a * b).collect())
                .collect();
            Ok(ScheduleSet::Explicit {
                dim: *dim,
                schedules,
            })
        }
        ScheduleSet::Constraints { dim, rows } => Ok(ScheduleSet::Constraints {
            dim: *dim,
            rows: rows
                .iter()
                .map(|r| Constraint::new(r.coeffs.iter().zip(m).map(|(c, s)| c / s).collect()))
                .collect(),
        }),
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecDocument {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub queues: Vec<String>,
    /// Omitted for single-class networks: one class per queue, same id.
    #[serde(default)]
    pub classes: Vec<ClassEntry>,
    #[serde(default)]
    pub arrivals: Vec<StreamEntry>,
    /// Completion probability per class; classes not listed default to 1.
    #[serde(default)]
    pub service: BTreeMap<String, f64>,
    /// `routing[from][to]`; absent entries are zero.
    #[serde(default)]
    pub routing: BTreeMap<String, BTreeMap<String, f64>>,
    pub schedule_set: ScheduleSetDoc,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: String,
    pub queue: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StreamEntry {
    pub rate: f64,
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum ScheduleSetDoc {
    Explicit { schedules: Vec<Vec<u32>> },
    Constraints { rows: Vec<RowDoc> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowDoc {
    pub coeffs: BTreeMap<String, f64>,
    #[serde(default = "unit_bound")]
    pub bound: f64,
}

fn unit_bound() -> f64 {
    1.0
}

impl From<&NetworkSpec> for SpecDocument {
    fn from(spec: &NetworkSpec) -> Self {
        let cid = |k: usize| spec.classes[k].id.clone();
        let schedule_set = match &spec.schedule_set {
            ScheduleSet::Explicit { schedules, .. } => ScheduleSetDoc::Explicit {
                schedules: schedules.clone(),
            },
            ScheduleSet::Constraints { rows, .. } => ScheduleSetDoc::Constraints {
                rows: rows
                    .iter()
                    .map(|r| RowDoc {
                        coeffs: r
                            .coeffs
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| **c != 0.0)
                            .map(|(j, c)| (spec.queues[j].clone(), *c))
                            .collect(),
                        bound: 1.0,
                    })
                    .collect(),
            },
        };
        SpecDocument {
            schema_version: SCHEMA_VERSION,
            queues: spec.queues.clone(),
            classes: spec
                .classes
                .iter()
                .map(|c| ClassEntry {
                    id: c.id.clone(),
                    queue: spec.queues[c.queue].clone(),
                })
                .collect(),
            arrivals: spec
                .arrivals
                .iter()
                .map(|s| StreamEntry {
                    rate: s.rate,
                    classes: s.classes.iter().map(|&k| cid(k)).collect(),
                })
                .collect(),
            service: spec
                .classes
                .iter()
                .map(|c| (c.id.clone(), c.service_prob))
                .collect(),
            routing: spec
                .routing
                .iter()
                .enumerate()
                .filter_map(|(k, row)| {
                    let targets: BTreeMap<String, f64> = row
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p != 0.0)
                        .map(|(k2, p)| (cid(k2), *p))
                        .collect();
                    (!targets.is_empty()).then(|| (cid(k), targets))
                })
                .collect(),
            schedule_set,
        }
    }
}

impl TryFrom<SpecDocument> for NetworkSpec {
    type Error = Error;

    fn try_from(doc: SpecDocument) -> Result<Self> {
        let qidx: HashMap<&str, usize> = doc
            .queues
            .iter()
            .enumerate()
            .map(|(i, q)| (q.as_str(), i))
            .collect();
        let class_entries: Vec<ClassEntry> = if doc.classes.is_empty() {
            doc.queues
                .iter()
                .map(|q| ClassEntry {
                    id: q.clone(),
                    queue: q.clone(),
                })
                .collect()
        } else {
            doc.classes.clone()
        };
        let mut classes = Vec::with_capacity(class_entries.len());
        for e in &class_entries {
            let queue = *qidx
                .get(e.queue.as_str())
                .ok_or_else(|| Error::UnknownId(e.queue.clone()))?;
            classes.push(ClassSpec {
                id: e.id.clone(),
                queue,
                service_prob: 1.0,
            });
        }
        let kidx: HashMap<String, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let class_of = |id: &str| {
            kidx.get(id)
                .copied()
                .ok_or_else(|| Error::UnknownId(id.to_string()))
        };

        for (id, p) in &doc.service {
            classes[class_of(id)?].service_prob = *p;
        }
        let nk = classes.len();
        let mut routing = vec![vec![0.0; nk]; nk];
        for (from, targets) in &doc.routing {
            let k = class_of(from)?;
            for (to, p) in targets {
                routing[k][class_of(to)?] = *p;
            }
        }
        let arrivals = doc
            .arrivals
            .iter()
            .map(|s| {
                Ok(ArrivalStream {
                    rate: s.rate,
                    classes: s
                        .classes
                        .iter()
                        .map(|c| class_of(c))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = doc.queues.len();
        let schedule_set = match doc.schedule_set {
            ScheduleSetDoc::Explicit { schedules } => ScheduleSet::Explicit { dim, schedules },
            ScheduleSetDoc::Constraints { rows } => {
                let mut out = Vec::with_capacity(rows.len());
                for row in rows {
                    if !(row.bound > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "constraint bound must be positive (got {})",
                            row.bound
                        )));
                    }
                    let mut coeffs = vec![0.0; dim];
                    for (q, c) in &row.coeffs {
                        let j = *qidx
                            .get(q.as_str())
                            .ok_or_else(|| Error::UnknownId(q.clone()))?;
                        coeffs[j] = c / row.bound;
                    }
                    out.push(Constraint::new(coeffs));
                }
                ScheduleSet::Constraints { dim, rows: out }
            }
        };
        Ok(NetworkSpec {
            queues: doc.queues,
            classes,
            arrivals,
            routing,
            schedule_set,
        })
    }
}
