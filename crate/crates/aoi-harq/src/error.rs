//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised while loading or validating a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("unknown config key `{key}`; valid keys are: {valid}")]
    UnknownKey { key: String, valid: String },
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("config key `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Contract violations in the environment dynamics.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("attempt count {attempts} outside 1..={max}")]
    AttemptsOutOfRange { attempts: u32, max: u32 },
    #[error("action {action} is not feasible in the given state")]
    InfeasibleAction { action: String },
    #[error("expected {expected} arrival flags (one per random-arrival source), got {got}")]
    ArrivalCount { expected: usize, got: usize },
}

/// Failures of the exact CMDP pipeline.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("reachable state set exceeds the cap of {cap} states")]
    StateCapExceeded { cap: usize },
    #[error(
        "value iteration did not converge within {iters} iterations \
         (residual {residual:.3e}, tolerance {tolerance:.3e})"
    )]
    NoConvergence {
        iters: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("stationary-distribution iteration did not converge within {iters} iterations (residual {residual:.3e})")]
    StationaryNoConvergence { iters: usize, residual: f64 },
    #[error(
        "aoi_limit {limit} is unreachable: the minimum achievable average AoI \
         under these arrival/decoding rates is {achievable:.4}"
    )]
    Infeasible { limit: f64, achievable: f64 },
    #[error("no feasible policy found for any multiplier up to {beta_cap}")]
    BracketExhausted { beta_cap: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Failures while simulating a controller or reading/writing its artifacts.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy table has no entry for visited state {state}")]
    PolicyLookup { state: String },
    #[error("policy file {path}: {reason}")]
    PolicyFile { path: String, reason: String },
    #[error("policy was solved for a different configuration (hash {policy_hash:#018x} != {config_hash:#018x})")]
    ConfigMismatch { policy_hash: u64, config_hash: u64 },
    #[error("unknown controller `{0}`; valid: cmdp, lower-bound, lcdt, dql, baseline, all-idle")]
    UnknownController(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures of the learning pipeline.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("TD loss became non-finite at gradient step {step} (episode {episode}); training aborted")]
    NonFiniteLoss { step: usize, episode: usize },
    #[error("checkpoint file {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
