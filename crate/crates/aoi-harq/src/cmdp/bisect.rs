//! Bisection over the Lagrange multiplier.

use crate::config::SystemConfig;
use crate::env::Action;
use crate::error::SolveError;

use super::evaluate::{evaluate_policy, EvalMethod, EvalMode, PolicyEvaluation};
use super::rvia::{rvia, rvia_weighted, RviaOptions};
use super::space::{enumerate_states_capped, KernelTable, StateSpace, DEFAULT_STATE_CAP};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Initial bisection bracket; the upper end doubles until its policy is
    /// feasible.
    pub beta_lower: f64,
    pub beta_upper: f64,
    /// Bisection stops once `beta_upper - beta_lower < kappa`.
    pub kappa: f64,
    /// Relative-value-iteration stopping threshold.
    pub epsilon: f64,
    pub max_rvia_iterations: usize,
    /// Policies on spaces up to this size are evaluated exactly; larger ones
    /// by a fixed-seed Monte-Carlo run.
    pub exact_eval_threshold: usize,
    pub mc_horizon: usize,
    pub state_cap: usize,
    /// Upper-bracket doubling gives up beyond this multiplier.
    pub beta_expand_cap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            beta_lower: 0.0,
            beta_upper: 1.0,
            kappa: 0.005,
            epsilon: 0.01,
            max_rvia_iterations: 200_000,
            exact_eval_threshold: 500_000,
            mc_horizon: 1_000_000,
            state_cap: DEFAULT_STATE_CAP,
            beta_expand_cap: (1u64 << 20) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Feasible,
    LowerBound,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::Feasible => write!(f, "feasible"),
            PolicyKind::LowerBound => write!(f, "lower_bound"),
        }
    }
}

/// A solved policy table with its multiplier and evaluation record.
#[derive(Debug, Clone)]
pub struct DeterministicPolicy {
    pub actions: Vec<Action>,
    pub beta: f64,
    pub tau_bar: f64,
    pub delta_bar: f64,
    pub eval_method: EvalMethod,
}

/// One bisection iterate, kept for diagnostics and for the monotonicity
/// checks (average AoI decreasing in `beta`, average Lagrangian increasing).
#[derive(Debug, Clone, Copy)]
pub struct BisectionStep {
    pub beta: f64,
    pub tau_bar: f64,
    pub delta_bar: f64,
    pub avg_lagrangian: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct SolvedPolicies {
    /// Smallest multiplier found whose policy satisfies the constraint.
    pub beta_tilde: f64,
    pub feasible: DeterministicPolicy,
    /// Policy at the infeasible lower bracket; its average transmission
    /// count lower-bounds the constrained optimum.
    pub lower_bound: DeterministicPolicy,
    pub trace: Vec<BisectionStep>,
    pub state_count: usize,
}

struct Solver<'a> {
    space: &'a StateSpace,
    table: &'a KernelTable,
    cfg: &'a SystemConfig,
    opts: SolveOptions,
    trace: Vec<BisectionStep>,
}

struct Solved {
    policy: Vec<Action>,
    evaluation: PolicyEvaluation,
}

impl Solver<'_> {
    fn eval_mode(&self) -> EvalMode {
        if self.space.len() <= self.opts.exact_eval_threshold {
            EvalMode::Exact
        } else {
            EvalMode::MonteCarlo {
                horizon: self.opts.mc_horizon,
                seed: self.cfg.rng_seed,
            }
        }
    }

    fn solve_at(&mut self, beta: f64) -> Result<Solved, SolveError> {
        let rvia_opts = RviaOptions {
            epsilon: self.opts.epsilon,
            max_iterations: self.opts.max_rvia_iterations,
        };
        let result = rvia(self.space, self.table, beta, rvia_opts)?;
        let evaluation =
            evaluate_policy(self.space, self.table, &result.policy, self.cfg, self.eval_mode())?;
        self.trace.push(BisectionStep {
            beta,
            tau_bar: evaluation.tau_bar,
            delta_bar: evaluation.delta_bar,
            avg_lagrangian: result.avg_lagrangian,
            feasible: evaluation.delta_bar <= self.cfg.aoi_limit,
        });
        Ok(Solved {
            policy: result.policy,
            evaluation,
        })
    }

    /// Minimum average AoI achievable by any policy (the limit of the
    /// beta-optimal policies as the multiplier grows without bound). Used to
    /// distinguish "bracket too small" from "constraint unreachable".
    fn min_achievable_aoi(&mut self) -> Result<f64, SolveError> {
        let rvia_opts = RviaOptions {
            epsilon: self.opts.epsilon,
            max_iterations: self.opts.max_rvia_iterations,
        };
        let result = rvia_weighted(self.space, self.table, 0.0, 1.0, rvia_opts)?;
        let evaluation =
            evaluate_policy(self.space, self.table, &result.policy, self.cfg, self.eval_mode())?;
        Ok(evaluation.delta_bar)
    }
}

fn to_policy(beta: f64, solved: &Solved) -> DeterministicPolicy {
    DeterministicPolicy {
        actions: solved.policy.clone(),
        beta,
        tau_bar: solved.evaluation.tau_bar,
        delta_bar: solved.evaluation.delta_bar,
        eval_method: solved.evaluation.method,
    }
}

/// Algorithm: bisection on the multiplier with a relative-value-iteration
/// solve per iterate. Returns the feasible policy at the final upper bracket
/// and the infeasible lower-bound policy at the final lower bracket.
pub fn bisection_solve(cfg: &SystemConfig, opts: SolveOptions) -> Result<SolvedPolicies, SolveError> {
    let space = enumerate_states_capped(cfg, opts.state_cap)?;
    let table = KernelTable::build(&space, cfg);
    bisection_solve_prepared(cfg, &space, &table, opts)
}

/// Variant reusing a pre-built state space and kernel table (the enumeration
/// dominates setup cost when solving several multiplier problems on one
/// instance).
pub fn bisection_solve_prepared(
    cfg: &SystemConfig,
    space: &StateSpace,
    table: &KernelTable,
    opts: SolveOptions,
) -> Result<SolvedPolicies, SolveError> {
    let mut solver = Solver {
        space,
        table,
        cfg,
        opts,
        trace: Vec::new(),
    };
    let limit = cfg.aoi_limit;

    let mut beta_lower = opts.beta_lower;
    let mut beta_upper = opts.beta_upper;

    let lower_solved = solver.solve_at(beta_lower)?;
    if lower_solved.evaluation.delta_bar <= limit {
        // The constraint is slack even at the lower bracket (e.g. the limit
        // equals the age cap): the unconstrained policy is already feasible
        // and also the lower bound.
        let policy = to_policy(beta_lower, &lower_solved);
        return Ok(SolvedPolicies {
            beta_tilde: beta_lower,
            feasible: policy.clone(),
            lower_bound: policy,
            trace: solver.trace,
            state_count: space.len(),
        });
    }
    let mut lower_solved = lower_solved;

    let mut upper_solved = solver.solve_at(beta_upper)?;
    if upper_solved.evaluation.delta_bar > limit {
        // Before doubling the bracket, make sure a feasible policy exists at
        // all: compare the limit against the minimum achievable average AoI.
        let achievable = solver.min_achievable_aoi()?;
        if achievable > limit {
            return Err(SolveError::Infeasible { limit, achievable });
        }
        loop {
            beta_lower = beta_upper;
            lower_solved = upper_solved;
            beta_upper *= 2.0;
            if beta_upper > opts.beta_expand_cap {
                return Err(SolveError::BracketExhausted {
                    beta_cap: opts.beta_expand_cap,
                });
            }
            upper_solved = solver.solve_at(beta_upper)?;
            if upper_solved.evaluation.delta_bar <= limit {
                break;
            }
        }
    }

    while beta_upper - beta_lower >= opts.kappa {
        let mid = 0.5 * (beta_upper + beta_lower);
        let solved = solver.solve_at(mid)?;
        if solved.evaluation.delta_bar <= limit {
            beta_upper = mid;
            upper_solved = solved;
        } else {
            beta_lower = mid;
            lower_solved = solved;
        }
    }

    Ok(SolvedPolicies {
        beta_tilde: beta_upper,
        feasible: to_policy(beta_upper, &upper_solved),
        lower_bound: to_policy(beta_lower, &lower_solved),
        trace: solver.trace,
        state_count: space.len(),
    })
}
