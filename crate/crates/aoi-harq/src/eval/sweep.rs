//! Parameter sweeps producing the figure datasets.

use std::sync::Arc;

use crate::cmdp::{bisection_solve_prepared, KernelTable, SolveOptions};
use crate::config::SystemConfig;
use crate::error::{ConfigError, SimError, SolveError};

use super::controllers::{
    AllIdleController, BaselineController, LcdtController, TablePolicyController,
};
use super::metrics::{simulate, RunMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerId {
    /// Feasible deterministic policy from the exact pipeline.
    Cmdp,
    /// Infeasible lower-bound policy from the exact pipeline.
    LowerBound,
    Lcdt,
    Baseline,
    AllIdle,
}

impl ControllerId {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerId::Cmdp => "cmdp",
            ControllerId::LowerBound => "lower-bound",
            ControllerId::Lcdt => "lcdt",
            ControllerId::Baseline => "baseline",
            ControllerId::AllIdle => "all-idle",
        }
    }
}

impl std::str::FromStr for ControllerId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cmdp" => Ok(ControllerId::Cmdp),
            "lower-bound" => Ok(ControllerId::LowerBound),
            "lcdt" => Ok(ControllerId::Lcdt),
            "baseline" => Ok(ControllerId::Baseline),
            "all-idle" => Ok(ControllerId::AllIdle),
            other => Err(SimError::UnknownController(other.to_string())),
        }
    }
}

/// One sweep: vary a single config field over `values`, run each controller
/// on every instance.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
    pub base: SystemConfig,
    pub controllers: Vec<ControllerId>,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub solve_options: SolveOptions,
}

pub const AGGREGATE_CSV_HEADER: &str =
    "param_name,param_value,controller,tau_bar,tau_ci,delta_bar,delta_ci,feasible,seeds,horizon";

/// Sweepable config fields.
const SWEEPABLE: &[&str] = &[
    "arrival_probs",
    "first_error_prob",
    "harq_gain",
    "max_attempts",
    "aoi_cap",
    "aoi_limit",
    "dpp_weight",
];

/// Returns `base` with one field replaced. `arrival_probs` sets every
/// random-arrival source to the same rate.
pub fn apply_param(base: &SystemConfig, param: &str, value: f64) -> Result<SystemConfig, ConfigError> {
    let mut cfg = base.clone();
    let as_int = |value: f64, key: &str| -> Result<u64, ConfigError> {
        if value.fract() != 0.0 || value < 0.0 {
            return Err(ConfigError::InvalidValue {
                key: key.to_string(),
                reason: format!("{value} is not a non-negative integer"),
            });
        }
        Ok(value as u64)
    };
    match param {
        "arrival_probs" => {
            cfg.arrival_probs = vec![value; cfg.num_random_sources];
        }
        "first_error_prob" => cfg.first_error_prob = value,
        "harq_gain" => cfg.harq_gain = value,
        "max_attempts" => cfg.max_attempts = as_int(value, param)? as u8,
        "aoi_cap" => cfg.aoi_cap = as_int(value, param)? as u16,
        "aoi_limit" => cfg.aoi_limit = value,
        "dpp_weight" => cfg.dpp_weight = value,
        other => {
            return Err(ConfigError::UnknownKey {
                key: other.to_string(),
                valid: SWEEPABLE.join(", "),
            })
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !SWEEPABLE.contains(&self.param.as_str()) {
            return Err(ConfigError::UnknownKey {
                key: self.param.clone(),
                valid: SWEEPABLE.join(", "),
            });
        }
        if self.values.is_empty() || self.controllers.is_empty() || self.seeds.is_empty() {
            return Err(ConfigError::Invalid(
                "sweep needs at least one value, controller and seed".into(),
            ));
        }
        Ok(())
    }
}

fn fmt(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.6}")
    } else {
        "nan".to_string()
    }
}

fn aggregate_row(
    param: &str,
    value: f64,
    controller: &str,
    metrics: &RunMetrics,
    seeds: &[u64],
    horizon: usize,
) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        param,
        fmt(value),
        controller,
        fmt(metrics.tau_bar),
        fmt(metrics.tau_ci),
        fmt(metrics.delta_bar),
        fmt(metrics.delta_ci),
        metrics.feasible(),
        seed_list(seeds),
        horizon,
    )
}

fn seed_list(seeds: &[u64]) -> String {
    seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Runs the sweep and renders the dataset: one row per (value, controller,
/// seed) followed by one aggregate row per (value, controller). An instance
/// whose exact solve is infeasible yields a flagged aggregate row with NaN
/// metrics instead of an error.
pub fn run_sweep(spec: &SweepSpec) -> Result<String, SimError> {
    spec.validate().map_err(|e| SimError::PolicyFile {
        path: "sweep".into(),
        reason: e.to_string(),
    })?;
    let mut csv = String::new();
    csv.push_str(AGGREGATE_CSV_HEADER);
    csv.push('\n');

    let needs_solve = spec
        .controllers
        .iter()
        .any(|c| matches!(c, ControllerId::Cmdp | ControllerId::LowerBound));

    for &value in &spec.values {
        let cfg = apply_param(&spec.base, &spec.param, value).map_err(|e| SimError::PolicyFile {
            path: "sweep".into(),
            reason: e.to_string(),
        })?;

        // Solve once per value when any table controller is requested.
        let mut solved = None;
        let mut solve_space = None;
        if needs_solve {
            let space =
                crate::cmdp::enumerate_states_capped(&cfg, spec.solve_options.state_cap)?;
            let table = KernelTable::build(&space, &cfg);
            match bisection_solve_prepared(&cfg, &space, &table, spec.solve_options) {
                Ok(s) => {
                    solved = Some(s);
                    solve_space = Some(Arc::new(space));
                }
                Err(SolveError::Infeasible { .. }) | Err(SolveError::BracketExhausted { .. }) => {}
                Err(other) => return Err(other.into()),
            }
        }

        for controller in &spec.controllers {
            match controller {
                ControllerId::Cmdp | ControllerId::LowerBound => {
                    let Some(solved) = solved.as_ref() else {
                        // Infeasible instance: flagged row, no metrics.
                        csv.push_str(&format!(
                            "{},{},{},nan,nan,nan,nan,false,{},{}\n",
                            spec.param,
                            fmt(value),
                            controller.label(),
                            seed_list(&spec.seeds),
                            spec.horizon,
                        ));
                        continue;
                    };
                    let space = solve_space.as_ref().unwrap();
                    let policy = match controller {
                        ControllerId::Cmdp => &solved.feasible,
                        _ => &solved.lower_bound,
                    };
                    let ctrl = TablePolicyController::new(
                        Arc::clone(space),
                        Arc::new(policy.actions.clone()),
                    );
                    let metrics = simulate(&ctrl, &cfg, spec.horizon, &spec.seeds)?;
                    push_rows(&mut csv, spec, value, controller.label(), &metrics);
                }
                ControllerId::Lcdt => {
                    let metrics = simulate(&LcdtController, &cfg, spec.horizon, &spec.seeds)?;
                    push_rows(&mut csv, spec, value, controller.label(), &metrics);
                }
                ControllerId::Baseline => {
                    let metrics =
                        simulate(&BaselineController::new(), &cfg, spec.horizon, &spec.seeds)?;
                    push_rows(&mut csv, spec, value, controller.label(), &metrics);
                }
                ControllerId::AllIdle => {
                    let metrics = simulate(&AllIdleController, &cfg, spec.horizon, &spec.seeds)?;
                    push_rows(&mut csv, spec, value, controller.label(), &metrics);
                }
            }
        }
    }
    Ok(csv)
}

fn push_rows(csv: &mut String, spec: &SweepSpec, value: f64, controller: &str, metrics: &RunMetrics) {
    for seed_outcome in &metrics.per_seed {
        csv.push_str(&format!(
            "{},{},{},{},,{},,{},{},{}\n",
            spec.param,
            fmt(value),
            controller,
            fmt(seed_outcome.tau_bar),
            fmt(seed_outcome.delta_bar),
            seed_outcome.delta_bar <= metrics.config.aoi_limit,
            seed_outcome.seed,
            spec.horizon,
        ));
    }
    csv.push_str(&aggregate_row(
        &spec.param,
        value,
        controller,
        metrics,
        &spec.seeds,
        spec.horizon,
    ));
}
