//! Sweep orchestration for the kd-core models: TOML sweep specs, parallel
//! deterministic execution, CSV tables and replica-vs-simulation
//! comparison. The `kdrs` binary is a thin command line over this crate.

pub mod compare;
pub mod config;
pub mod error;
pub mod figures;
pub mod record;
pub mod spec;
pub mod sweep;

pub use compare::{compare, CompareOptions, Comparison, Quantity};
pub use error::{HarnessError, Result};
pub use record::{read_records, read_records_file, ReplicaBlock, Stat, Status, SweepRecord};
pub use spec::{Axis, Mode, Param, SweepSpec, Tune};
pub use sweep::{run_sweep, run_sweep_with, RunOptions};
