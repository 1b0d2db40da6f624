use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchnet::experiment::{
    run_experiment, ExperimentConfig, ExperimentError, InitSpec, Mode, NetworkSource, Preset, SweepOptions,
};
use switchnet::policy::{PolicyConfig, PolicyKind, WeightSpec};

/// Simulate and analyse discrete-time switched queueing networks.
#[derive(Parser, Debug)]
#[command(name = "switchnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the network spec (and component tags) as JSON.
    Build(Common),
    /// Traffic equations, load and the exact theorem conditions.
    Check(Common),
    /// Run the stochastic simulation.
    Simulate(Common),
    /// Integrate the fluid model and check its Lyapunov certificate.
    Fluid(Common),
    /// Run simulations over a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named network (fig2, fig3, tandem, fig4-tandem, branching, fig6, fig8-collapsed, lqfs).
    #[arg(long)]
    preset: Option<String>,
    /// Network spec JSON file instead of a preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Arrival rate, fractions allowed (e.g. 7/12).
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// Policy kind, e.g. max_weight or weighted_max_weight.
    #[arg(long)]
    policy: Option<String>,
    /// `auto_rho` or comma-separated per-queue weights.
    #[arg(long)]
    weights: Option<String>,
    /// `default`, `empty`, `pattern:M[:eps]` or `ID=N,ID=N,...`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add per-class columns to the trajectory CSV.
    #[arg(long)]
    record_classes: bool,
    /// Fluid step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Fluid time horizon.
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Grid axis `name=v1,v2,...` (repeatable; names a, nu, J, eps, K, seed).
    #[arg(long = "grid", value_name = "NAME=VALUES")]
    grid: Vec<String>,
    /// Worker threads (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn parse_weights(s: &str) -> Result<WeightSpec, ExperimentError> {
    if s == "auto_rho" {
        return Ok(WeightSpec::AUTO_RHO);
    }
    s.split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map(WeightSpec::Explicit)
        .map_err(|_| ExperimentError::Config(format!("cannot parse weights '{s}'")))
}

fn parse_kind(s: &str) -> Result<PolicyKind, ExperimentError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| ExperimentError::Config(format!("unknown policy '{s}'")))
}

fn build_config(mode: Mode, c: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(mode, NetworkSource::default()),
    };
    cfg.mode = mode;
    let net = &mut cfg.network;
    if let Some(p) = &c.preset {
        net.preset = Some(p.parse::<Preset>()?);
        net.spec = None;
    }
    if let Some(s) = &c.spec {
        net.spec = Some(s.clone());
        net.preset = None;
    }
    net.a = c.a.clone().or(net.a.take());
    net.nu = c.nu.clone().or(net.nu.take());
    net.eps = c.eps.clone().or(net.eps.take());
    net.j = c.j.or(net.j);
    net.k = c.k.or(net.k);

    let weights = c.weights.as_deref().map(parse_weights).transpose()?;
    if mode == Mode::Fluid {
        if weights.is_some() {
            cfg.fluid.weights = weights;
        }
    } else if c.policy.is_some() || weights.is_some() {
        let kind = match &c.policy {
            Some(k) => parse_kind(k)?,
            None => PolicyKind::WeightedMaxWeight,
        };
        let mut policy = PolicyConfig::new(kind);
        if kind == PolicyKind::LargestClassWeightedMaxWeight {
            policy.class_weights = weights;
        } else {
            policy.weights = weights;
        }
        cfg.policy = Some(policy);
    }
    if let Some(i) = &c.init {
        cfg.init = i.parse::<InitSpec>()?;
    }
    if let Some(s) = c.steps {
        cfg.steps = s;
    }
    if let Some(r) = c.record_every {
        cfg.record_every = r;
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.record_classes |= c.record_classes;
    if let Some(dt) = c.dt {
        cfg.fluid.dt = dt;
    }
    if let Some(t) = c.t_max {
        cfg.fluid.t_max = t;
    }
    Ok(cfg)
}

fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = build_config(Mode::Sweep, &args.common)?;
    let mut opts = cfg.sweep.take().unwrap_or(SweepOptions { grid: BTreeMap::new(), workers: 0 });
    for axis in &args.grid {
        let (name, values) = axis
            .split_once('=')
            .ok_or_else(|| ExperimentError::Config(format!("grid axis '{axis}' is not NAME=VALUES")))?;
        let values = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        opts.grid.insert(name.trim().to_string(), values);
    }
    if args.workers > 0 {
        opts.workers = args.workers;
    }
    cfg.sweep = Some(opts);
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.command {
        Command::Build(c) => build_config(Mode::Build, c),
        Command::Check(c) => build_config(Mode::Check, c),
        Command::Simulate(c) => build_config(Mode::Simulate, c),
        Command::Fluid(c) => build_config(Mode::Fluid, c),
        Command::Sweep(s) => sweep_config(s),
    };
    let result = cfg.and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.message.trim_end());
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let ExperimentError::Validation(switchnet::Error::Validation(vs)) = &e {
                for v in vs {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
