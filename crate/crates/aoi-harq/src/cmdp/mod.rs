//! Known-environment exact pipeline.
//!
//! The constrained problem (minimize average transmissions subject to an
//! average-AoI limit) is relaxed with a Lagrange multiplier `beta` into an
//! average-cost MDP with the single cost `L(s, a, beta) = c(a) + beta * d(s)`,
//! where `c` is the transmission indicator and `d` the average AoI of the
//! current state. For a fixed `beta` the relaxed MDP is solved by relative
//! value iteration over the reachable state set; bisection over `beta` then
//! finds the smallest multiplier whose policy satisfies the constraint,
//! returning that feasible policy together with the infeasible policy at the
//! lower bracket, whose average transmission count lower-bounds the
//! constrained optimum.

mod bisect;
mod evaluate;
mod policy_io;
mod rvia;
mod space;

pub use bisect::{
    bisection_solve, bisection_solve_prepared, BisectionStep, DeterministicPolicy, PolicyKind, SolveOptions, SolvedPolicies,
};
pub use evaluate::{evaluate_policy, EvalMethod, EvalMode, PolicyEvaluation};
pub use policy_io::{load_policy, save_policy, PolicyFile};
pub use rvia::{lagrangian_cost, rvia, RviaOptions, RviaResult};
pub use space::{enumerate_states, enumerate_states_capped, KernelTable, StateSpace, DEFAULT_STATE_CAP};
