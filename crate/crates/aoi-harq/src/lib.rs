//! Transmission scheduling for multi-source HARQ status updating.
//!
//! A transmitter serves `K` sources (random-arrival and generate-at-will)
//! over an error-prone channel with HARQ combining, and must keep the
//! long-run average Age of Information below a limit while transmitting as
//! rarely as possible. This crate provides:
//!
//! * [`env`] — the slotted dynamics: age recursions, decoding probability,
//!   feasible actions, stochastic stepping, and the exact one-step
//!   transition kernel.
//! * [`cmdp`] — the known-environment exact pipeline: reachable state
//!   enumeration, relative value iteration for a fixed Lagrange multiplier,
//!   and bisection over the multiplier yielding a feasible deterministic
//!   policy plus an infeasible lower-bound policy.
//! * [`lyapunov`] — the low-complexity dynamic transmission (LC-DT)
//!   controller built on a virtual queue and a per-slot drift-plus-penalty
//!   bound evaluated in closed form.
//! * [`dql`] — a from-scratch deep Q-learning agent for the unknown
//!   environment, trained on the drift-plus-penalty reward.
//! * [`eval`] — the experiment harness: baseline policy, multi-seed
//!   Monte-Carlo simulation of any controller, and parameter sweeps.
//! * [`verify`] — self-check suites (closed-form oracles, kernel
//!   normalization, gradient checks) runnable from the CLI.
//!
//! The `book/` directory of the repository walks through the model and each
//! solver with runnable snippets.

pub mod config;
pub mod env;
pub mod error;

pub mod cmdp;
pub mod dql;
pub mod eval;
pub mod lyapunov;
pub mod verify;

pub use config::SystemConfig;
pub use env::{Action, SourceState, StepOutcome, SystemState};
pub use error::{ConfigError, EnvError, SimError, SolveError, TrainError};
