//! Experiment orchestration: convergence-time measurement, sweeps, scaling fits and the
//! source-observer and separation experiments.

mod convergence;
mod experiments;
pub mod stats;
mod sweep;
mod systems;

pub use convergence::{convergence_time, ConvergenceOptions, ConvergenceResult, TrialSystem};
pub use experiments::{
    chernoff_source_observers_check, separation_experiment, ChernoffReport, SeparationPoint,
    SeparationReport,
};
pub use sweep::{
    cell_bound, read_records, read_records_file, run_cell, sweep, write_records,
    write_records_file, ExperimentRecord, Grid, RunConfig,
};
pub use systems::{CanonicalObserverSystem, ProtocolKind, SimulatedSystem, SystemSpec};
