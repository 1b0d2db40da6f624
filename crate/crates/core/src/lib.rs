//! Discrete-time switched queueing networks.
//!
//! Networks are described by a [`NetworkSpec`]; schedulers from [`policy`]
//! drive the stochastic simulator in [`sim`], and [`fluid`] integrates the
//! deterministic fluid limit. [`analysis`] holds traffic equations, load
//! checks, cycle detection and statistics.

pub mod analysis;
pub mod builders;
pub mod error;
pub mod experiment;
pub mod fluid;
pub mod network;
pub mod policy;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
pub use network::{
    ArrivalStream, ClassSpec, Constraint, NetworkSpec, Schedule, ScheduleSet, Violation,
};
pub use policy::{PolicyConfig, PolicyKind, Scheduler, TieBreak, WeightSpec};
pub use sim::{run, InitialState, SimConfig, SimRun, Simulator, Trajectory};
