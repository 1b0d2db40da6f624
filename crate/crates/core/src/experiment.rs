//! Experiment driver: named presets, JSON configs, and the artifact-writing
//! run modes used by the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    detect_cycles, parse_fraction, stability_proxy, subcritical_check, theorem_condition_check,
    traffic_solve, CycleParams, Exact, TheoremKind,
};
use crate::builders::{
    build_collapsed_rs, build_instability_network, build_lqfs_network, build_multiclass_rs,
    build_pure_branching, build_tandem, example_tree, BranchingCapacity, ComponentTags, Role,
};
use crate::error::Error;
use crate::fluid::{
    absolute_margin, decay_rate_certificate, fluid_run_with, window_readings, FluidModel,
    LyapunovKind, DEFAULT_CERTIFICATE_WINDOW,
};
use crate::network::{NetworkSpec, SCHEMA_VERSION};
use crate::policy::{PolicyConfig, WeightSpec};
use crate::seed::derive_seed;
use crate::sim::{run, InitialState, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(Error),
    #[error("{0}")]
    Runtime(Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// 2 for configuration and validation problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Validation(_) => 2,
            ExperimentError::Runtime(_) | ExperimentError::Io { .. } => 3,
        }
    }
}

impl From<Error> for ExperimentError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::OverlappingConstraints { .. }
            | Error::UnboundedQueue { .. }
            | Error::InvalidScale { .. }
            | Error::InvalidParameter(_)
            | Error::UnknownId(_)
            | Error::UnsupportedSet(_)
            | Error::ZeroTraffic { .. }
            | Error::Json(_) => ExperimentError::Validation(e),
            other => ExperimentError::Runtime(other),
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Two-component instability network.
    #[serde(alias = "fig3")]
    Fig2,
    #[serde(rename = "tandem", alias = "fig4-tandem", alias = "fig4")]
    Tandem,
    #[serde(rename = "branching", alias = "fig5")]
    Branching,
    /// Multiclass two-component network.
    #[serde(alias = "fig7")]
    Fig6,
    Fig8Collapsed,
    Lqfs,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig2,
        Preset::Tandem,
        Preset::Branching,
        Preset::Fig6,
        Preset::Fig8Collapsed,
        Preset::Lqfs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Tandem => "tandem",
            Preset::Branching => "branching",
            Preset::Fig6 => "fig6",
            Preset::Fig8Collapsed => "fig8-collapsed",
            Preset::Lqfs => "lqfs",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            ExperimentError::Config(format!(
                "unknown preset '{s}' (known: {}, fig3, fig4-tandem, fig5, fig7)",
                names.join(", ")
            ))
        })
    }
}

/// Which network to run: a preset with optional parameter overrides, or a
/// spec file. Numeric parameters are strings so that fractions like `7/12`
/// stay exact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<String>,
    #[serde(
        default,
        rename = "J",
        alias = "j",
        skip_serializing_if = "Option::is_none"
    )]
    pub j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<String>,
    #[serde(
        default,
        rename = "K",
        alias = "k",
        skip_serializing_if = "Option::is_none"
    )]
    pub k: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// The preset's own starting state (empty for spec files).
    #[default]
    Default,
    Empty,
    /// Jobs per queue or class id.
    Counts {
        counts: BTreeMap<String, u64>,
    },
    /// `M` jobs in component B, balanced between hub and spread queues, and
    /// `floor(eps M / nu)` jobs spread evenly over component A.
    Pattern {
        m: u64,
        #[serde(default)]
        eps: f64,
    },
}

impl std::str::FromStr for InitSpec {
    type Err = ExperimentError;

    /// `default`, `empty`, `pattern:M[:eps]`, or `ID=N,ID=N,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || ExperimentError::Config(format!("cannot parse initial condition '{s}'"));
        match s.trim() {
            "default" => return Ok(InitSpec::Default),
            "empty" => return Ok(InitSpec::Empty),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("pattern:") {
            let mut it = rest.split(':');
            let m = it.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let eps = match it.next() {
                Some(e) => e.parse().map_err(|_| bad())?,
                None => 0.0,
            };
            return Ok(InitSpec::Pattern { m, eps });
        }
        let mut counts = BTreeMap::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (id, n) = part.split_once('=').ok_or_else(bad)?;
            counts.insert(id.trim().to_string(), n.trim().parse().map_err(|_| bad())?);
        }
        if counts.is_empty() {
            return Err(bad());
        }
        Ok(InitSpec::Counts { counts })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Build,
    Check,
    #[default]
    Simulate,
    Fluid,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidOptions {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Defaults to all ones (plain MaxWeight).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
    /// Initial levels with total at most 1; defaults to the normalized initial
    /// condition, or uniform when that is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    /// Certificate interval in time units.
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_max() -> f64 {
    100.0
}

fn default_window() -> f64 {
    DEFAULT_CERTIFICATE_WINDOW
}

impl Default for FluidOptions {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_max: default_t_max(),
            weights: None,
            q0: None,
            window: default_window(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    /// Parameter name (`a`, `nu`, `J`, `eps`, `K`, `seed`) to values.
    pub grid: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    pub network: NetworkSource,
    /// Defaults to the preset's policy (MaxWeight for spec files).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub record_classes: bool,
    #[serde(default)]
    pub fluid: FluidOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepOptions>,
}

fn default_steps() -> u64 {
    100_000
}

fn default_record_every() -> u64 {
    100
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(mode: Mode, network: NetworkSource) -> Self {
        Self {
            mode,
            network,
            policy: None,
            init: InitSpec::Default,
            steps: default_steps(),
            record_every: default_record_every(),
            seed: None,
            out: default_out(),
            record_classes: false,
            fluid: FluidOptions::default(),
            sweep: None,
        }
    }

    pub fn preset(mode: Mode, preset: Preset) -> Self {
        Self::new(
            mode,
            NetworkSource {
                preset: Some(preset),
                ..Default::default()
            },
        )
    }

    /// Reads a JSON config; relative spec paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(spec), Some(dir)) = (&cfg.network.spec, path.parent()) {
            if spec.is_relative() {
                cfg.network.spec = Some(dir.join(spec));
            }
        }
        Ok(cfg)
    }
}

/// A network ready to run, with the preset's defaults attached.
#[derive(Clone, Debug)]
pub struct BuiltNetwork {
    pub preset: Option<Preset>,
    pub spec: NetworkSpec,
    pub tags: Option<ComponentTags>,
    pub policy: PolicyConfig,
    pub init: BTreeMap<String, u64>,
    pub cycle_params: Option<CycleParams>,
    /// Exact `(kind, a, nu, J)` for the condition check.
    pub theorem: Option<(TheoremKind, Exact, i128, i128)>,
}

fn exact_param(v: &Option<String>, default: &str, name: &str) -> Result<Exact> {
    let s = v.as_deref().unwrap_or(default);
    parse_fraction(s).map_err(|_| ExperimentError::Config(format!("cannot parse {name} = '{s}'")))
}

fn to_f64(r: Exact) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn build_network(src: &NetworkSource) -> Result<BuiltNetwork> {
    match (src.preset, &src.spec) {
        (Some(_), Some(_)) => Err(ExperimentError::Config(
            "give either a preset or a spec file, not both".into(),
        )),
        (None, None) => Err(ExperimentError::Config(
            "no network given (preset or spec)".into(),
        )),
        (None, Some(path)) => {
            let spec = NetworkSpec::load(path).map_err(|e| match e {
                Error::Io(source) => ExperimentError::Io {
                    path: path.clone(),
                    source,
                },
                other => other.into(),
            })?;
            Ok(BuiltNetwork {
                preset: None,
                spec,
                tags: None,
                policy: PolicyConfig::max_weight(),
                init: BTreeMap::new(),
                cycle_params: None,
                theorem: None,
            })
        }
        (Some(p), None) => build_preset(p, src),
    }
}

fn build_preset(preset: Preset, src: &NetworkSource) -> Result<BuiltNetwork> {
    let counts = |pairs: &[(&str, u64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    Ok(match preset {
        Preset::Fig2 | Preset::Lqfs => {
            let a = exact_param(&src.a, "7/12", "a")?;
            let nu = exact_param(&src.nu, "6", "nu")?;
            let j = src.j.unwrap_or(30);
            let lqfs = preset == Preset::Lqfs;
            let (spec, tags, policy) = if lqfs {
                build_lqfs_network(to_f64(a), to_f64(nu), j)?
            } else {
                let (s, t) = build_instability_network(to_f64(a), to_f64(nu), j)?;
                (s, t, PolicyConfig::max_weight())
            };
            let theorem = nu.is_integer().then(|| {
                let kind = if lqfs {
                    TheoremKind::Thm6
                } else {
                    TheoremKind::Thm1
                };
                (kind, a, nu.to_integer(), j as i128)
            });
            BuiltNetwork {
                preset: Some(preset),
                spec,
                tags: Some(tags),
                policy,
                init: counts(&[("A0", 1722)]),
                cycle_params: Some(CycleParams {
                    nu: to_f64(nu),
                    a: to_f64(a),
                    primed: lqfs,
                }),
                theorem,
            }
        }
        Preset::Tandem => {
            let a = to_f64(exact_param(&src.a, "1/2", "a")?);
            BuiltNetwork {
                preset: Some(preset),
                spec: build_tandem(src.j.unwrap_or(5), a, None)?,
                tags: None,
                policy: PolicyConfig::max_weight(),
                init: BTreeMap::new(),
                cycle_params: None,
                theorem: None,
            }
        }
        Preset::Branching => {
            let a = to_f64(exact_param(&src.a, "1/5", "a")?);
            let (children, probs) = example_tree();
            BuiltNetwork {
                preset: Some(preset),
                spec: build_pure_branching(&children, a, &probs, BranchingCapacity::Shared)?,
                tags: None,
                policy: PolicyConfig::max_weight(),
                init: BTreeMap::new(),
                cycle_params: None,
                theorem: None,
            }
        }
        Preset::Fig6 | Preset::Fig8Collapsed => {
            let a = to_f64(exact_param(&src.a, "1", "a")?);
            let eps = to_f64(exact_param(&src.eps, "0.1791", "eps")?);
            let (spec, tags) = if preset == Preset::Fig6 {
                build_multiclass_rs(a, eps, src.k.unwrap_or(20))?
            } else {
                build_collapsed_rs(a, eps)?
            };
            BuiltNetwork {
                preset: Some(preset),
                spec,
                tags: Some(tags),
                policy: PolicyConfig::max_weight(),
                init: counts(&[("A0", 55)]),
                cycle_params: None,
                theorem: None,
            }
        }
    })
}

/// Initial job counts for `init` on `net`.
pub fn initial_state(net: &BuiltNetwork, init: &InitSpec) -> Result<InitialState> {
    let spec = &net.spec;
    let pairs: Vec<(String, u64)> = match init {
        InitSpec::Default => net.init.clone().into_iter().collect(),
        InitSpec::Empty => Vec::new(),
        InitSpec::Counts { counts } => counts.clone().into_iter().collect(),
        InitSpec::Pattern { m, eps } => {
            let (tags, params) =
                match (&net.tags, &net.cycle_params) {
                    (Some(t), Some(p)) => (t, p),
                    _ => return Err(ExperimentError::Config(
                        "the pattern initial condition needs a two-component hub/spread network"
                            .into(),
                    )),
                };
            if !(0.0..=1.0).contains(eps) {
                return Err(ExperimentError::Config(format!(
                    "pattern eps must lie in [0, 1] (got {eps})"
                )));
            }
            pattern_counts(spec, tags, *m, *eps, params.nu, params.primed)?
        }
    };
    Ok(InitialState::from_pairs(spec, &pairs)?)
}

/// `M` at component B with the hub at `nu` times each spread queue (equal in
/// primed mode), remainder to the hub; `floor(eps M / nu)` spread evenly over
/// component A.
pub fn pattern_counts(
    spec: &NetworkSpec,
    tags: &ComponentTags,
    m: u64,
    eps: f64,
    nu: f64,
    primed: bool,
) -> Result<Vec<(String, u64)>> {
    let r = tags.resolve(&spec.queues)?;
    let (a, b) = (0, 1);
    let j = r.spread[b].len() as f64;
    let hub_share = if primed { 1.0 } else { nu };
    let per_spread = (m as f64 / (j + hub_share)).floor() as u64;
    let mut out = Vec::new();
    let spread_total = per_spread * r.spread[b].len() as u64;
    out.push((spec.queues[r.hub[b]].clone(), m - spread_total));
    out.extend(
        r.spread[b]
            .iter()
            .map(|&q| (spec.queues[q].clone(), per_spread)),
    );

    let a_total = (eps * m as f64 / nu).floor() as u64;
    let a_queues: Vec<usize> = std::iter::once(r.hub[a])
        .chain(r.spread[a].iter().copied())
        .collect();
    let each = a_total / a_queues.len() as u64;
    let extra = a_total - each * a_queues.len() as u64;
    for (i, &q) in a_queues.iter().enumerate() {
        let n = each + if i == 0 { extra } else { 0 };
        if n > 0 {
            out.push((spec.queues[q].clone(), n));
        }
    }
    Ok(out)
}

/// Files written and a short human-readable summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutcome {
    pub files: Vec<PathBuf>,
    pub summary: Value,
    pub message: String,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if cfg.mode == Mode::Sweep {
        return sweep(cfg);
    }
    let net = build_network(&cfg.network)?;
    let out = Outputs::new(&cfg.out)?;
    match cfg.mode {
        Mode::Build => run_build(&net, out),
        Mode::Check => run_check(&net, out),
        Mode::Simulate => run_simulate(cfg, &net, out),
        Mode::Fluid => run_fluid(cfg, &net, out),
        Mode::Sweep => unreachable!(),
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.into(),
            source,
        })?;
        Ok(Self {
            dir: dir.into(),
            files: Vec::new(),
        })
    }

    fn io(&self, path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(self.io(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Runtime(e.into()))?;
        self.write(name, &(text + "\n"))
    }

    fn with_file(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(self.io(&path))?;
        let mut w = BufWriter::new(file);
        f(&mut w).map_err(self.io(&path))?;
        std::io::Write::flush(&mut w).map_err(self.io(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, summary: Value, message: String) -> ExperimentOutcome {
        ExperimentOutcome {
            files: self.files,
            summary,
            message,
        }
    }
}

fn tags_json(net: &BuiltNetwork) -> Value {
    json!({ "schema_version": SCHEMA_VERSION, "tags": net.tags.as_ref().map(|t| &t.tags) })
}

fn run_build(net: &BuiltNetwork, mut out: Outputs) -> Result<ExperimentOutcome> {
    out.write("spec.json", &(net.spec.to_json_string()? + "\n"))?;
    if net.tags.is_some() {
        out.json("tags.json", &tags_json(net))?;
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "preset": net.preset.map(Preset::name),
        "queues": net.spec.num_queues(),
        "classes": net.spec.num_classes(),
    });
    let msg = format!(
        "wrote spec with {} queues to {}",
        net.spec.num_queues(),
        out.dir.display()
    );
    Ok(out.finish(summary, msg))
}

fn run_check(net: &BuiltNetwork, mut out: Outputs) -> Result<ExperimentOutcome> {
    let traffic = traffic_solve(&net.spec)?;
    let sub = subcritical_check(&net.spec, &traffic)?;
    let mut message = format!(
        "load {:.6} ({:?}), traffic residual {:.2e}\n",
        sub.load, sub.status, traffic.residual
    );
    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "preset": net.preset.map(Preset::name),
        "traffic": traffic,
        "subcritical": sub,
    });
    if let Some((kind, a, nu, j)) = net.theorem {
        let report = theorem_condition_check(kind, a, nu, j);
        let table = report.table();
        out.write("conditions.txt", &table)?;
        out.json("conditions.json", &report)?;
        message.push_str(&table);
        summary["all_pass"] = json!(report.all_pass);
        summary["conditions"] =
            serde_json::to_value(&report).map_err(|e| ExperimentError::Runtime(e.into()))?;
    }
    out.json("check.json", &summary)?;
    Ok(out.finish(summary, message))
}

fn gnuplot_script(csv: &str, columns: &[(usize, &str)], ylabel: &str) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key autotitle columnhead outside\nset xlabel 't'\nset ylabel '{ylabel}'\n"
    );
    let plots: Vec<String> = columns
        .iter()
        .map(|(c, style)| format!("'{csv}' using 1:{c} with {style}"))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

fn run_simulate(
    cfg: &ExperimentConfig,
    net: &BuiltNetwork,
    mut out: Outputs,
) -> Result<ExperimentOutcome> {
    let seed = cfg
        .seed
        .ok_or_else(|| ExperimentError::Config("simulate mode needs a seed".into()))?;
    let policy = cfg.policy.clone().unwrap_or_else(|| net.policy.clone());
    let init = initial_state(net, &cfg.init)?;
    let mut sim_cfg = SimConfig::new(cfg.steps, cfg.record_every, seed);
    sim_cfg.record_classes = cfg.record_classes;
    let started = Instant::now();
    let result = run(&net.spec, &policy, &init, &sim_cfg)?;
    let traj = &result.trajectory;
    out.with_file("trajectory.csv", |w| traj.write_csv(w))?;

    let mut summary =
        serde_json::to_value(&result.summary).map_err(|e| ExperimentError::Runtime(e.into()))?;
    summary["preset"] = json!(net.preset.map(Preset::name));
    summary["flow_residual"] = json!(result.state.flow_residual());
    summary["stability"] = match stability_proxy(traj) {
        Ok(s) => serde_json::to_value(s).map_err(|e| ExperimentError::Runtime(e.into()))?,
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    let mut message = format!(
        "{} steps, total {} -> {}",
        cfg.steps, result.summary.initial_total, result.summary.final_total
    );
    if let (Some(tags), Some(params)) = (&net.tags, &net.cycle_params) {
        let cycles = detect_cycles(traj, tags, params)?;
        summary["cycles"] = json!(cycles.cycles.len());
        summary["geometric_mean_growth"] = json!(cycles.geometric_mean_growth(0));
        message.push_str(&format!(", {} cycles", cycles.cycles.len()));
        out.json("cycles.json", &cycles)?;
    }
    summary["elapsed_secs"] = json!(started.elapsed().as_secs_f64());
    out.json("summary.json", &summary)?;

    let nq = net.spec.num_queues();
    let mut cols = vec![(nq + 2, "lines lw 2")];
    if let Some(tags) = &net.tags {
        for t in tags.tags.iter().filter(|t| t.role == Role::Hub) {
            if let Some(i) = net.spec.queue_index(&t.queue) {
                cols.push((i + 2, "lines"));
            }
        }
    }
    out.write("plot.gp", &gnuplot_script("trajectory.csv", &cols, "jobs"))?;
    Ok(out.finish(summary, message))
}

/// Monitored function, decay bound and emptying deadline for a fluid run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificatePlan {
    pub monitored: LyapunovKind,
    pub epsilon: f64,
    pub bound: f64,
    /// Time by which the run must have emptied, when one is known.
    pub t0: Option<f64>,
}

/// Tandem: `h` with bound `eps^2 / (2 a J^2)`, `eps` the distance from the
/// arrival rate to the nearest capacity. Branching: `g_branch` with bound
/// `eps^2 / 2`, `eps` that distance divided by the number of queues.
/// Otherwise `h` with bound `eps^2 / (2 |J|^2)`, `eps` the relative margin.
pub fn certificate_plan(
    preset: Option<Preset>,
    spec: &NetworkSpec,
    model: &FluidModel,
    h0: f64,
) -> Result<CertificatePlan> {
    let traffic = model.traffic();
    let n = spec.num_queues() as f64;
    Ok(match preset {
        Some(Preset::Tandem) => {
            let eps = absolute_margin(spec, traffic)?;
            let a: f64 = spec.arrivals.iter().map(|s| s.rate).sum();
            let bound = eps * eps / (2.0 * a * n * n);
            CertificatePlan {
                monitored: LyapunovKind::H,
                epsilon: eps,
                bound,
                t0: Some(h0 / bound),
            }
        }
        Some(Preset::Branching) => {
            let eps = absolute_margin(spec, traffic)? / n;
            CertificatePlan {
                monitored: LyapunovKind::GBranch,
                epsilon: eps,
                bound: eps * eps / 2.0,
                t0: None,
            }
        }
        _ => {
            let eps = subcritical_check(spec, traffic)?.scale_margin;
            CertificatePlan {
                monitored: LyapunovKind::H,
                epsilon: eps,
                bound: 0.5 * eps * eps / (n * n),
                t0: None,
            }
        }
    })
}

fn resolve_fluid_weights(spec: &NetworkSpec, weights: &Option<WeightSpec>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; spec.num_queues()]),
        Some(w) => {
            let sched = PolicyConfig::weighted(w.clone()).resolve(spec)?;
            Ok(sched.weights().to_vec())
        }
    }
}

fn run_fluid(
    cfg: &ExperimentConfig,
    net: &BuiltNetwork,
    mut out: Outputs,
) -> Result<ExperimentOutcome> {
    let spec = &net.spec;
    let opts = &cfg.fluid;
    let weights = resolve_fluid_weights(spec, &opts.weights)?;
    let model = FluidModel::new(spec, &weights)?;
    let q0 = match &opts.q0 {
        Some(q) => q.clone(),
        None => {
            let init = initial_state(net, &cfg.init)?;
            let q = spec.sum_by_queue(&init.class_counts);
            let total: u64 = q.iter().sum();
            if total == 0 {
                vec![1.0 / spec.num_queues() as f64; spec.num_queues()]
            } else {
                q.iter().map(|&x| x as f64 / total as f64).collect()
            }
        }
    };
    let fr = fluid_run_with(&model, &q0, opts.dt, opts.t_max, 100)?;
    out.with_file("fluid.csv", |w| fr.write_csv(w))?;
    out.with_file("lyapunov.csv", |w| {
        use std::io::Write;
        writeln!(w, "t,total,h,f,g,g_branch,left_derivative_estimate")?;
        for r in &fr.readings {
            writeln!(
                w,
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6}",
                r.t, r.total, r.h, r.f, r.g, r.g_branch, r.left_derivative_estimate
            )?;
        }
        Ok(())
    })?;
    let h0 = fr.readings.first().map_or(0.0, |r| r.h);
    let plan = certificate_plan(net.preset, spec, &model, h0)?;
    let cert = decay_rate_certificate(
        &fr.readings,
        plan.monitored,
        plan.bound,
        window_readings(opts.window, opts.dt),
    );
    let emptied_in_time = match (fr.emptied_at, plan.t0) {
        (Some(t), Some(t0)) => Some(t <= t0),
        (None, Some(_)) => Some(false),
        _ => None,
    };
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "preset": net.preset.map(Preset::name),
        "dt": opts.dt,
        "t_max": opts.t_max,
        "weights": weights,
        "emptied_at": fr.emptied_at,
        "empty_threshold": fr.empty_threshold,
        "plan": plan,
        "emptied_before_t0": emptied_in_time,
        "certificate": cert,
    });
    out.json("summary.json", &summary)?;
    out.json("certificate.json", &cert)?;
    out.write(
        "plot.gp",
        &gnuplot_script(
            "lyapunov.csv",
            &[(2, "lines"), (3, "lines"), (6, "lines")],
            "value",
        ),
    )?;
    let message = format!(
        "emptied at {}, certificate on {:?} with bound {:.3e}: {} (worst slope {:.3e})",
        fr.emptied_at
            .map_or("never".to_string(), |t| format!("{t:.3}")),
        plan.monitored,
        plan.bound,
        if cert.pass { "PASS" } else { "FAIL" },
        cert.worst_slope
    );
    Ok(out.finish(summary, message))
}

/// One grid point: parameter assignments, derived seed and result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub result: std::result::Result<Value, String>,
}

fn grid_points(grid: &BTreeMap<String, Vec<String>>) -> Vec<BTreeMap<String, String>> {
    let mut points = vec![BTreeMap::new()];
    for (k, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(k.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

/// `k=v;k=v` in key order; hashed with the master seed to give the point seed.
pub fn point_key(params: &BTreeMap<String, String>) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn point_config(
    base: &ExperimentConfig,
    params: &BTreeMap<String, String>,
    index: usize,
) -> Result<(ExperimentConfig, u64)> {
    let mut cfg = base.clone();
    cfg.mode = Mode::Simulate;
    cfg.sweep = None;
    cfg.out = base.out.join(format!("point-{index:04}"));
    let master = base
        .seed
        .ok_or_else(|| ExperimentError::Config("sweep mode needs a master seed".into()))?;
    let mut seed = derive_seed(master, &point_key(params));
    for (k, v) in params {
        let bad = || ExperimentError::Config(format!("bad value '{v}' for sweep parameter '{k}'"));
        match k.as_str() {
            "a" => cfg.network.a = Some(v.clone()),
            "nu" => cfg.network.nu = Some(v.clone()),
            "eps" => cfg.network.eps = Some(v.clone()),
            "J" | "j" => cfg.network.j = Some(v.parse().map_err(|_| bad())?),
            "K" | "k" => cfg.network.k = Some(v.parse().map_err(|_| bad())?),
            "seed" => seed = v.parse().map_err(|_| bad())?,
            other => {
                return Err(ExperimentError::Config(format!(
                    "unknown sweep parameter '{other}'"
                )))
            }
        }
    }
    cfg.seed = Some(seed);
    Ok((cfg, seed))
}

/// Runs `simulate` at every grid point on a pool of worker threads.
///
/// Point seeds are `derive_seed(master, point_key(params))` unless the grid
/// sets `seed` directly. Failures are recorded per point.
pub fn sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let opts = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("sweep mode needs a grid".into()))?;
    if opts.grid.is_empty() || opts.grid.values().any(Vec::is_empty) {
        return Err(ExperimentError::Config(
            "sweep grid must be nonempty".into(),
        ));
    }
    let points = grid_points(&opts.grid);
    let configs: Vec<(ExperimentConfig, u64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| point_config(cfg, p, i))
        .collect::<Result<_>>()?;
    let workers = match opts.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(points.len());

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, configs) = (&next, &configs);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((pc, _)) = configs.get(i) else { break };
                let r = run_experiment(pc)
                    .map(|o| o.summary)
                    .map_err(|e| e.to_string());
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<Option<std::result::Result<Value, String>>> = vec![None; points.len()];
    for (i, r) in rx {
        results[i] = Some(r);
    }
    let entries: Vec<SweepPoint> = points
        .into_iter()
        .zip(configs)
        .zip(results)
        .enumerate()
        .map(|(index, ((params, (_, seed)), result))| SweepPoint {
            index,
            params,
            seed,
            result: result.unwrap_or_else(|| Err("worker exited before finishing".into())),
        })
        .collect();
    let failed = entries.iter().filter(|e| e.result.is_err()).count();
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "master_seed": cfg.seed,
        "workers": workers,
        "points": entries,
        "failed": failed,
    });
    let mut out = Outputs::new(&cfg.out)?;
    out.json("sweep.json", &summary)?;
    let message = format!("{} points, {} failed", entries.len(), failed);
    Ok(out.finish(summary, message))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!("fig4-tandem".parse::<Preset>().unwrap(), Preset::Tandem);
        assert_eq!("fig3".parse::<Preset>().unwrap(), Preset::Fig2);
        assert!("fig9".parse::<Preset>().is_err());
    }

    #[test]
    fn init_parsing() {
        assert_eq!("empty".parse::<InitSpec>().unwrap(), InitSpec::Empty);
        assert_eq!(
            "pattern:3600:0.1".parse::<InitSpec>().unwrap(),
            InitSpec::Pattern { m: 3600, eps: 0.1 }
        );
        let InitSpec::Counts { counts } = "A0=1722, B3=4".parse::<InitSpec>().unwrap() else {
            panic!("expected counts")
        };
        assert_eq!(counts["A0"], 1722);
        assert_eq!(counts["B3"], 4);
        assert!("A0".parse::<InitSpec>().is_err());
    }

    #[test]
    fn pattern_is_balanced() {
        let net = build_network(&NetworkSource {
            preset: Some(Preset::Fig2),
            ..Default::default()
        })
        .unwrap();
        let st = initial_state(&net, &InitSpec::Pattern { m: 3600, eps: 0.0 }).unwrap();
        let q = net.spec.sum_by_queue(&st.class_counts);
        let b0 = net.spec.queue_index("B0").unwrap();
        assert_eq!(q.iter().sum::<u64>(), 3600);
        // 3600 / 36 = 100 per spread queue, hub 600 = nu * 100
        assert_eq!(q[b0], 600);
        assert_eq!(q[b0 + 1], 100);
        assert_eq!(q[..b0].iter().sum::<u64>(), 0);
    }

    #[test]
    fn grid_expansion() {
        let mut grid = BTreeMap::new();
        grid.insert("a".to_string(), vec!["0.5".to_string(), "0.6".to_string()]);
        grid.insert(
            "J".to_string(),
            vec!["10".to_string(), "20".to_string(), "30".to_string()],
        );
        let pts = grid_points(&grid);
        assert_eq!(pts.len(), 6);
        assert_eq!(point_key(&pts[0]), "J=10;a=0.5");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExperimentError::Config("x".into()).exit_code(), 2);
        assert_eq!(ExperimentError::from(Error::NotOpen).exit_code(), 3);
        assert_eq!(
            ExperimentError::from(Error::InvalidParameter("x".into())).exit_code(),
            2
        );
    }
}
