//! Experiment harness: controllers, multi-seed simulation, sweeps.

mod controllers;
mod metrics;
mod sweep;

pub use controllers::{
    AllIdleController, BaselineController, Controller, DqlGreedyController, LcdtController,
    TablePolicyController,
};
pub use metrics::{simulate, simulate_with_burn_in, RunMetrics, SeedOutcome, DEFAULT_BURN_IN};
pub use sweep::{run_sweep, ControllerId, SweepSpec, AGGREGATE_CSV_HEADER};
