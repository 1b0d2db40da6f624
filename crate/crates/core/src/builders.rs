//! Constructors for the networks studied here, with component tags for the
//! two-component instability networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{validate_spec, ArrivalStream, ClassSpec, NetworkSpec, ScheduleSet};
use crate::policy::{PolicyConfig, PolicyKind, WeightSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    A,
    B,
}

impl Component {
    pub fn other(self) -> Self {
        match self {
            Component::A => Component::B,
            Component::B => Component::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Component::A => 0,
            Component::B => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hub,
    Spread,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueTag {
    pub queue: String,
    pub component: Component,
    pub role: Role,
}

/// Component and role of each queue of a two-component network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentTags {
    pub tags: Vec<QueueTag>,
}

/// Tags turned into queue indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedTags {
    /// Hub queue index per component (A, B).
    pub hub: [usize; 2],
    /// Spread queue indices per component (A, B).
    pub spread: [Vec<usize>; 2],
}

impl ComponentTags {
    pub fn resolve(&self, queue_ids: &[String]) -> Result<ResolvedTags> {
        let mut hub = [None, None];
        let mut spread: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for t in &self.tags {
            let j = queue_ids
                .iter()
                .position(|q| *q == t.queue)
                .ok_or_else(|| Error::UnknownId(t.queue.clone()))?;
            let c = t.component.index();
            match t.role {
                Role::Hub => {
                    if hub[c].replace(j).is_some() {
                        return Err(Error::InvalidParameter(format!(
                            "component {:?} has more than one hub",
                            t.component
                        )));
                    }
                }
                Role::Spread => spread[c].push(j),
            }
        }
        let [Some(a), Some(b)] = hub else {
            return Err(Error::InvalidParameter(
                "each component needs exactly one hub".into(),
            ));
        };
        if spread.iter().any(Vec::is_empty) {
            return Err(Error::InvalidParameter(
                "each component needs spread queues".into(),
            ));
        }
        Ok(ResolvedTags {
            hub: [a, b],
            spread,
        })
    }
}

/// How the per-component arrival rate reaches the spread queues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalMode {
    /// One Bernoulli(a) arrival per step, sent to a uniformly chosen spread queue.
    #[default]
    Dispatch,
    /// Independent Bernoulli(a/J) arrivals at every spread queue.
    Independent,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

fn single_class(queues: &[String], service: &[f64]) -> Vec<ClassSpec> {
    queues
        .iter()
        .zip(service)
        .enumerate()
        .map(|(j, (q, &p))| ClassSpec {
            id: q.clone(),
            queue: j,
            service_prob: p,
        })
        .collect()
}

fn debug_validate(spec: &NetworkSpec) {
    debug_assert!(validate_spec(spec).is_empty(), "{:?}", validate_spec(spec));
}

fn two_component_names(j: usize) -> Vec<String> {
    let mut q = Vec::with_capacity(2 * (j + 1));
    for c in ["A", "B"] {
        q.push(format!("{c}0"));
        q.extend((1..=j).map(|i| format!("{c}{i}")));
    }
    q
}

fn two_component_tags(queues: &[String], j: usize) -> ComponentTags {
    let tags = queues
        .iter()
        .enumerate()
        .map(|(i, q)| QueueTag {
            queue: q.clone(),
            component: if i <= j { Component::A } else { Component::B },
            role: if i % (j + 1) == 0 {
                Role::Hub
            } else {
                Role::Spread
            },
        })
        .collect();
    ComponentTags { tags }
}

/// The two-component counterexample network: hubs `A0`, `B0`, spread queues
/// `A1..AJ`, `B1..BJ`; spread jobs cross to the other hub, hubs exit; each
/// component obeys `sigma_0 + (1/nu) sum_j sigma_j <= 1`.
pub fn build_instability_network(
    a: f64,
    nu: f64,
    j: usize,
) -> Result<(NetworkSpec, ComponentTags)> {
    build_instability_network_with(a, nu, j, ArrivalMode::Dispatch)
}

pub fn build_instability_network_with(
    a: f64,
    nu: f64,
    j: usize,
    mode: ArrivalMode,
) -> Result<(NetworkSpec, ComponentTags)> {
    check(j >= 1, || format!("J must be at least 1 (got {j})"))?;
    check(nu >= 1.0 && nu.is_finite(), || {
        format!("nu must be >= 1 (got {nu})")
    })?;
    check(a > 0.0 && a < 1.0, || {
        format!("a must lie in (0, 1) (got {a})")
    })?;

    let queues = two_component_names(j);
    let n = queues.len();
    let classes = single_class(&queues, &vec![1.0; n]);
    let (a0, b0) = (0, j + 1);
    let spread_a: Vec<usize> = (1..=j).collect();
    let spread_b: Vec<usize> = (j + 2..n).collect();

    let mut routing = vec![vec![0.0; n]; n];
    for &s in &spread_a {
        routing[s][b0] = 1.0;
    }
    for &s in &spread_b {
        routing[s][a0] = 1.0;
    }

    let arrivals = match mode {
        ArrivalMode::Dispatch => vec![
            ArrivalStream {
                rate: a,
                classes: spread_a.clone(),
            },
            ArrivalStream {
                rate: a,
                classes: spread_b.clone(),
            },
        ],
        ArrivalMode::Independent => spread_a
            .iter()
            .chain(&spread_b)
            .map(|&s| ArrivalStream {
                rate: a / j as f64,
                classes: vec![s],
            })
            .collect(),
    };

    let mut row_a = vec![0.0; n];
    let mut row_b = vec![0.0; n];
    row_a[a0] = 1.0;
    row_b[b0] = 1.0;
    for &s in &spread_a {
        row_a[s] = 1.0 / nu;
    }
    for &s in &spread_b {
        row_b[s] = 1.0 / nu;
    }

    let spec = NetworkSpec {
        queues: queues.clone(),
        classes,
        arrivals,
        routing,
        schedule_set: ScheduleSet::constraints(n, vec![row_a, row_b]),
    };
    debug_validate(&spec);
    Ok((spec, two_component_tags(&queues, j)))
}

/// Chain `Q1 -> Q2 -> ... -> QJ -> exit`, arrivals at rate `a` into `Q1`,
/// one constraint `sigma_j <= capacity_j` per queue.
pub fn build_tandem(j: usize, a: f64, capacities: Option<&[f64]>) -> Result<NetworkSpec> {
    check(j >= 1, || format!("J must be at least 1 (got {j})"))?;
    check((0.0..=1.0).contains(&a), || {
        format!("a must lie in [0, 1] (got {a})")
    })?;
    let caps = match capacities {
        Some(c) => {
            check(c.len() == j, || {
                format!("expected {j} capacities, got {}", c.len())
            })?;
            c.to_vec()
        }
        None => vec![1.0; j],
    };
    check(caps.iter().all(|c| *c > 0.0 && c.is_finite()), || {
        "capacities must be positive".into()
    })?;
    let queues: Vec<String> = (1..=j).map(|i| format!("Q{i}")).collect();
    let mut routing = vec![vec![0.0; j]; j];
    for i in 0..j - 1 {
        routing[i][i + 1] = 1.0;
    }
    let rows = (0..j)
        .map(|i| {
            let mut r = vec![0.0; j];
            r[i] = 1.0 / caps[i];
            r
        })
        .collect();
    let spec = NetworkSpec {
        classes: single_class(&queues, &vec![1.0; j]),
        arrivals: vec![ArrivalStream {
            rate: a,
            classes: vec![0],
        }],
        routing,
        schedule_set: ScheduleSet::constraints(j, rows),
        queues,
    };
    debug_validate(&spec);
    Ok(spec)
}

/// Capacity structure of a pure-branching network.
#[derive(Clone, Debug, PartialEq)]
pub enum BranchingCapacity {
    /// `sigma_j <= 1` at every node.
    PerQueue,
    /// One shared server: `sum_j sigma_j <= 1`.
    Shared,
}

/// Rooted out-tree network. Node 0 is the root and receives arrivals at rate
/// `a`; `children[v]` lists the children of node `v` and `probs[v]` the
/// matching routing probabilities (remainder exits).
pub fn build_pure_branching(
    children: &[Vec<usize>],
    a: f64,
    probs: &[Vec<f64>],
    capacity: BranchingCapacity,
) -> Result<NetworkSpec> {
    let n = children.len();
    check(n >= 1, || "tree needs at least one node".into())?;
    check(probs.len() == n, || {
        "one probability list per node required".into()
    })?;
    check((0.0..=1.0).contains(&a), || {
        format!("a must lie in [0, 1] (got {a})")
    })?;
    let mut parent = vec![None; n];
    for (v, kids) in children.iter().enumerate() {
        check(kids.len() == probs[v].len(), || {
            format!("node {v}: children and probabilities differ in length")
        })?;
        let sum: f64 = probs[v].iter().sum();
        check(
            sum <= 1.0 + 1e-12 && probs[v].iter().all(|p| *p >= 0.0),
            || format!("node {v}: branch probabilities must be >= 0 and sum to <= 1"),
        )?;
        for &c in kids {
            check(c < n && c != 0, || format!("node {v}: invalid child {c}"))?;
            check(parent[c].replace(v).is_none(), || {
                format!("node {c} has two parents")
            })?;
        }
    }
    // every non-root node must be reachable from the root
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::InvalidParameter("tree contains a cycle".into()));
        }
        stack.extend(&children[v]);
    }
    check(seen.iter().all(|s| *s), || {
        "tree is not connected to the root".into()
    })?;

    let queues: Vec<String> = (0..n).map(|v| format!("N{v}")).collect();
    let mut routing = vec![vec![0.0; n]; n];
    for (v, kids) in children.iter().enumerate() {
        for (&c, &p) in kids.iter().zip(&probs[v]) {
            routing[v][c] = p;
        }
    }
    let schedule_set = match capacity {
        BranchingCapacity::PerQueue => ScheduleSet::constraints(
            n,
            (0..n)
                .map(|v| {
                    let mut r = vec![0.0; n];
                    r[v] = 1.0;
                    r
                })
                .collect(),
        ),
        BranchingCapacity::Shared => ScheduleSet::unit_simplex(n),
    };
    let spec = NetworkSpec {
        classes: single_class(&queues, &vec![1.0; n]),
        arrivals: vec![ArrivalStream {
            rate: a,
            classes: vec![0],
        }],
        routing,
        schedule_set,
        queues,
    };
    debug_validate(&spec);
    Ok(spec)
}

/// Complete binary tree of the given depth with equal splits and no exits at
/// internal nodes.
pub fn binary_tree(depth: u32) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let n = (1usize << (depth + 1)) - 1;
    let mut children = vec![Vec::new(); n];
    let mut probs = vec![Vec::new(); n];
    for v in 0..n {
        let (l, r) = (2 * v + 1, 2 * v + 2);
        if r < n {
            children[v] = vec![l, r];
            probs[v] = vec![0.5, 0.5];
        }
    }
    (children, probs)
}

/// The twelve-node, four-level tree with even splits used as the standard
/// branching example (root, then 2, 3 and 6 nodes).
pub fn example_tree() -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let children: Vec<Vec<usize>> = vec![
        vec![1, 2],
        vec![3],
        vec![4, 5],
        vec![6, 7, 8],
        vec![9],
        vec![10, 11],
    ]
    .into_iter()
    .chain(std::iter::repeat(Vec::new()).take(6))
    .collect();
    let probs = children
        .iter()
        .map(|k| vec![1.0 / k.len() as f64; k.len()])
        .collect();
    (children, probs)
}

fn rs_queues() -> Vec<String> {
    ["A0", "A1", "B0", "B1"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn rs_tags() -> ComponentTags {
    let tag = |q: &str, component, role| QueueTag {
        queue: q.into(),
        component,
        role,
    };
    ComponentTags {
        tags: vec![
            tag("A0", Component::A, Role::Hub),
            tag("A1", Component::A, Role::Spread),
            tag("B0", Component::B, Role::Hub),
            tag("B1", Component::B, Role::Spread),
        ],
    }
}

fn rs_schedule_set(eps: f64) -> ScheduleSet {
    ScheduleSet::constraints(
        4,
        vec![
            vec![eps, eps * eps, 0.0, 0.0],
            vec![0.0, 0.0, eps, eps * eps],
        ],
    )
}

fn check_rs(a: f64, eps: f64) -> Result<()> {
    check(a > 0.0 && a <= 1.0, || {
        format!("a must lie in (0, 1] (got {a})")
    })?;
    check(eps > 0.0 && eps < 0.5, || {
        format!("epsilon must lie in (0, 1/2) (got {eps})")
    })
}

/// Multiclass two-component network: external arrivals at `A0` and `B0`,
/// `A0 -> B1` class 1, `B0 -> A1` class 1, and `K` chained classes at `A1`
/// and `B1` (class `K` exits). Constraints `eps s_0 + eps^2 s_1 <= 1` per
/// component.
pub fn build_multiclass_rs(a: f64, eps: f64, k: usize) -> Result<(NetworkSpec, ComponentTags)> {
    check_rs(a, eps)?;
    check(k >= 1, || format!("K must be at least 1 (got {k})"))?;
    let queues = rs_queues();
    let mut classes = vec![ClassSpec {
        id: "A0".into(),
        queue: 0,
        service_prob: 1.0,
    }];
    classes.extend((1..=k).map(|i| ClassSpec {
        id: format!("A1_{i}"),
        queue: 1,
        service_prob: 1.0,
    }));
    classes.push(ClassSpec {
        id: "B0".into(),
        queue: 2,
        service_prob: 1.0,
    });
    classes.extend((1..=k).map(|i| ClassSpec {
        id: format!("B1_{i}"),
        queue: 3,
        service_prob: 1.0,
    }));
    let nk = classes.len();
    let (ca0, ca1) = (0, 1);
    let (cb0, cb1) = (k + 1, k + 2);
    let mut routing = vec![vec![0.0; nk]; nk];
    routing[ca0][cb1] = 1.0;
    routing[cb0][ca1] = 1.0;
    for i in 0..k - 1 {
        routing[ca1 + i][ca1 + i + 1] = 1.0;
        routing[cb1 + i][cb1 + i + 1] = 1.0;
    }
    let spec = NetworkSpec {
        queues: queues.clone(),
        classes,
        arrivals: vec![
            ArrivalStream {
                rate: a,
                classes: vec![ca0],
            },
            ArrivalStream {
                rate: a,
                classes: vec![cb0],
            },
        ],
        routing,
        schedule_set: rs_schedule_set(eps),
    };
    debug_validate(&spec);
    Ok((spec, rs_tags()))
}

/// Single-class analogue of [`build_multiclass_rs`]: `A1` and `B1` have
/// geometric service with mean `(1 - 2 eps) / eps^2`.
pub fn build_collapsed_rs(a: f64, eps: f64) -> Result<(NetworkSpec, ComponentTags)> {
    check_rs(a, eps)?;
    let queues = rs_queues();
    let p1 = eps * eps / (1.0 - 2.0 * eps);
    let classes = single_class(&queues, &[1.0, p1, 1.0, p1]);
    let mut routing = vec![vec![0.0; 4]; 4];
    routing[0][3] = 1.0;
    routing[2][1] = 1.0;
    let spec = NetworkSpec {
        queues,
        classes,
        arrivals: vec![
            ArrivalStream {
                rate: a,
                classes: vec![0],
            },
            ArrivalStream {
                rate: a,
                classes: vec![2],
            },
        ],
        routing,
        schedule_set: rs_schedule_set(eps),
    };
    debug_validate(&spec);
    Ok((spec, rs_tags()))
}

/// `(1 - 2 eps) / eps^2`, the chain length matching a given epsilon.
pub fn rs_chain_length(eps: f64) -> f64 {
    (1.0 - 2.0 * eps) / (eps * eps)
}

/// Same network as [`build_instability_network`] with the LQFS batch weights
/// `(1, 1/nu, ..., 1/nu)` per component.
pub fn build_lqfs_network(
    a: f64,
    nu: f64,
    j: usize,
) -> Result<(NetworkSpec, ComponentTags, PolicyConfig)> {
    let (spec, tags) = build_instability_network(a, nu, j)?;
    let weights = (0..spec.num_queues())
        .map(|i| if i % (j + 1) == 0 { 1.0 } else { 1.0 / nu })
        .collect();
    let policy = PolicyConfig {
        weights: Some(WeightSpec::Explicit(weights)),
        ..PolicyConfig::new(PolicyKind::LqfsBatch)
    };
    Ok((spec, tags, policy))
}
