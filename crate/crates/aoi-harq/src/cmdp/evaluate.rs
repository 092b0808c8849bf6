//! Long-run average transmissions and AoI of a fixed deterministic policy.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SystemConfig;
use crate::env::{self, Action};
use crate::error::SolveError;

use super::space::{KernelTable, StateSpace};

/// Below this chain size the stationary distribution is solved directly;
/// larger chains use damped power iteration (a dense system of 20k+ states
/// would not fit in memory).
const DENSE_SOLVE_LIMIT: usize = 2_000;
const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITERATIONS: usize = 2_000_000;
/// 0.975 quantile of Student's t with 19 degrees of freedom, for the
/// 20-batch confidence interval of the Monte-Carlo mode.
const T_QUANTILE_19: f64 = 2.093;
const MC_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    /// Stationary distribution of the induced chain restricted to the states
    /// reachable from the all-zero start.
    Exact,
    /// Sample-path average over `horizon` slots with the given seed.
    MonteCarlo { horizon: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    Exact,
    MonteCarlo,
}

impl std::fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalMethod::Exact => write!(f, "exact"),
            EvalMethod::MonteCarlo => write!(f, "monte_carlo"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyEvaluation {
    pub tau_bar: f64,
    pub delta_bar: f64,
    /// 95% confidence halfwidths; zero in exact mode.
    pub tau_ci: f64,
    pub delta_ci: f64,
    pub method: EvalMethod,
}

/// Evaluates `policy` (one action per state index) on the chain it induces.
pub fn evaluate_policy(
    space: &StateSpace,
    table: &KernelTable,
    policy: &[Action],
    cfg: &SystemConfig,
    mode: EvalMode,
) -> Result<PolicyEvaluation, SolveError> {
    assert_eq!(policy.len(), space.len(), "policy must cover every state");
    match mode {
        EvalMode::Exact => exact_evaluation(space, table, policy),
        EvalMode::MonteCarlo { horizon, seed } => {
            Ok(monte_carlo_evaluation(space, policy, cfg, horizon, seed))
        }
    }
}

fn exact_evaluation(
    space: &StateSpace,
    table: &KernelTable,
    policy: &[Action],
) -> Result<PolicyEvaluation, SolveError> {
    // Restrict to the sub-chain reachable from the initial state under the
    // policy's own arcs.
    let mut sub_index = vec![u32::MAX; space.len()];
    let mut members = vec![space.reference_state];
    sub_index[space.reference_state] = 0;
    let mut cursor = 0;
    while cursor < members.len() {
        let state = members[cursor];
        cursor += 1;
        let (targets, _) = table
            .arcs_of(state, policy[state])
            .expect("policy action must be feasible");
        for &t in targets {
            if sub_index[t as usize] == u32::MAX {
                sub_index[t as usize] = members.len() as u32;
                members.push(t as usize);
            }
        }
    }
    let n = members.len();

    // Flatten the sub-chain arcs in transposed (incoming) form, which both
    // the direct solve and the gather-style power iteration consume.
    let mut in_degree = vec![0u32; n];
    for &state in &members {
        let (targets, _) = table.arcs_of(state, policy[state]).unwrap();
        for &t in targets {
            in_degree[sub_index[t as usize] as usize] += 1;
        }
    }
    let mut in_offsets = Vec::with_capacity(n + 1);
    in_offsets.push(0u32);
    for j in 0..n {
        in_offsets.push(in_offsets[j] + in_degree[j]);
    }
    let total_arcs = in_offsets[n] as usize;
    let mut in_sources = vec![0u32; total_arcs];
    let mut in_probs = vec![0.0f64; total_arcs];
    let mut fill = in_offsets[..n].to_vec();
    for (i, &state) in members.iter().enumerate() {
        let (targets, probs) = table.arcs_of(state, policy[state]).unwrap();
        for (&t, &p) in targets.iter().zip(probs) {
            let j = sub_index[t as usize] as usize;
            let slot = fill[j] as usize;
            in_sources[slot] = i as u32;
            in_probs[slot] = p;
            fill[j] += 1;
        }
    }

    let pi = stationary_distribution(n, &in_offsets, &in_sources, &in_probs)?;

    let mut tau_bar = 0.0;
    let mut delta_bar = 0.0;
    for (i, &state) in members.iter().enumerate() {
        if policy[state].is_transmit() {
            tau_bar += pi[i];
        }
        delta_bar += pi[i] * space.state(state).avg_aoi();
    }
    Ok(PolicyEvaluation {
        tau_bar,
        delta_bar,
        tau_ci: 0.0,
        delta_ci: 0.0,
        method: EvalMethod::Exact,
    })
}

/// Stationary distribution of the sub-chain given in incoming-arc form:
/// entry `e` in `in_offsets[j]..in_offsets[j+1]` says state `in_sources[e]`
/// flows into `j` with probability `in_probs[e]`.
fn stationary_distribution(
    n: usize,
    in_offsets: &[u32],
    in_sources: &[u32],
    in_probs: &[f64],
) -> Result<Vec<f64>, SolveError> {
    if n <= DENSE_SOLVE_LIMIT {
        if let Some(pi) = dense_stationary(n, in_offsets, in_sources, in_probs) {
            return Ok(pi);
        }
    }
    power_iteration(n, in_offsets, in_sources, in_probs)
}

/// Solves `pi P = pi`, `sum pi = 1` directly. Returns None when the system
/// is singular beyond the expected rank deficiency (e.g. several recurrent
/// classes), in which case the caller falls back to power iteration.
fn dense_stationary(
    n: usize,
    in_offsets: &[u32],
    in_sources: &[u32],
    in_probs: &[f64],
) -> Option<Vec<f64>> {
    // Rows of A are the balance equations (P^T - I), with the first row
    // replaced by the normalization constraint.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for e in in_offsets[j] as usize..in_offsets[j + 1] as usize {
            a[(j, in_sources[e] as usize)] += in_probs[e];
        }
        a[(j, j)] -= 1.0;
    }
    for j in 0..n {
        a[(0, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[0] = 1.0;
    let pi = a.lu().solve(&b)?;

    let mut result = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        if pi[i] < -1e-9 || !pi[i].is_finite() {
            return None;
        }
        result[i] = pi[i].max(0.0);
        total += result[i];
    }
    if (total - 1.0).abs() > 1e-8 {
        return None;
    }
    for value in &mut result {
        *value /= total;
    }
    // Verify the balance residual before trusting the solve.
    let residual = (0..n)
        .map(|j| {
            let flowed: f64 = (in_offsets[j] as usize..in_offsets[j + 1] as usize)
                .map(|e| result[in_sources[e] as usize] * in_probs[e])
                .sum();
            (result[j] - flowed).abs()
        })
        .fold(0.0, f64::max);
    (residual <= 1e-9).then_some(result)
}

/// Damped power iteration from the initial state: `mu' = (mu + mu P) / 2`.
/// The damping keeps periodic chains convergent, and starting from the
/// initial state makes the limit the long-run occupation measure from there
/// even if the chain is not unichain.
fn power_iteration(
    n: usize,
    in_offsets: &[u32],
    in_sources: &[u32],
    in_probs: &[f64],
) -> Result<Vec<f64>, SolveError> {
    use rayon::prelude::*;

    let mut mu = vec![0.0f64; n];
    mu[0] = 1.0;
    let mut next = vec![0.0f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERATIONS {
        {
            let mu_ref = &mu;
            next.par_iter_mut().enumerate().for_each(|(j, out)| {
                let mut acc = 0.0;
                for e in in_offsets[j] as usize..in_offsets[j + 1] as usize {
                    acc += mu_ref[in_sources[e] as usize] * in_probs[e];
                }
                *out = 0.5 * mu_ref[j] + 0.5 * acc;
            });
        }
        residual = next
            .par_iter()
            .zip(mu.par_iter())
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut mu, &mut next);
        if residual < POWER_TOLERANCE {
            return Ok(mu);
        }
    }
    Err(SolveError::StationaryNoConvergence {
        iters: POWER_MAX_ITERATIONS,
        residual,
    })
}

fn monte_carlo_evaluation(
    space: &StateSpace,
    policy: &[Action],
    cfg: &SystemConfig,
    horizon: usize,
    seed: u64,
) -> PolicyEvaluation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = space.state(space.reference_state).clone();
    let mut tau_sum = 0.0;
    let mut delta_sum = 0.0;
    let batch_len = (horizon / MC_BATCHES).max(1);
    let mut tau_batches = Vec::with_capacity(MC_BATCHES);
    let mut delta_batches = Vec::with_capacity(MC_BATCHES);
    let mut batch_tau = 0.0;
    let mut batch_delta = 0.0;
    let mut in_batch = 0usize;
    for _ in 0..horizon {
        let index = space
            .index_of(&state)
            .expect("trajectory stays inside the enumerated space");
        let action = policy[index];
        let delta_hat = state.avg_aoi();
        let tau = if action.is_transmit() { 1.0 } else { 0.0 };
        tau_sum += tau;
        delta_sum += delta_hat;
        batch_tau += tau;
        batch_delta += delta_hat;
        in_batch += 1;
        if in_batch == batch_len && tau_batches.len() < MC_BATCHES {
            tau_batches.push(batch_tau / in_batch as f64);
            delta_batches.push(batch_delta / in_batch as f64);
            batch_tau = 0.0;
            batch_delta = 0.0;
            in_batch = 0;
        }
        let outcome = env::step(&state, action, &mut rng, cfg).expect("policy action feasible");
        state = outcome.next_state;
    }
    let t = horizon as f64;
    PolicyEvaluation {
        tau_bar: tau_sum / t,
        delta_bar: delta_sum / t,
        tau_ci: batch_halfwidth(&tau_batches),
        delta_ci: batch_halfwidth(&delta_batches),
        method: EvalMethod::MonteCarlo,
    }
}

fn batch_halfwidth(batches: &[f64]) -> f64 {
    if batches.len() < 2 {
        return f64::INFINITY;
    }
    let n = batches.len() as f64;
    let mean = batches.iter().sum::<f64>() / n;
    let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0);
    T_QUANTILE_19 * (var / n).sqrt()
}
