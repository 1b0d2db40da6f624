//! Static network analysis and trajectory instrumentation.

mod conditions;
mod cycles;
mod stats;
mod traffic;

pub use conditions::{
    hull_load, parse_fraction, subcritical_check, theorem_condition_check, ConditionCheck,
    ConditionReport, Exact, ExactValue, SubcriticalReport, SubcriticalStatus, TheoremKind,
};
pub use cycles::{detect_cycles, CycleAnalysis, CycleParams, CycleReport};
pub use stats::{concentration_test, stability_proxy, ConcentrationReport, StabilityReport};
pub use traffic::{traffic_solve, TrafficSolution};
