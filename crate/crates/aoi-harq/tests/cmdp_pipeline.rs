//! Exact-pipeline checks against brute-force policy enumeration.

mod common;

use aoi_harq::cmdp::{
    bisection_solve, enumerate_states, evaluate_policy, rvia, EvalMode, KernelTable, RviaOptions,
    SolveOptions,
};
use aoi_harq::SystemConfig;

use common::PolicyEnumeration;

fn gaw_instance(aoi_cap: u16, p0: f64) -> SystemConfig {
    SystemConfig {
        num_random_sources: 0,
        num_gaw_sources: 1,
        arrival_probs: vec![],
        first_error_prob: p0,
        harq_gain: 0.4,
        max_attempts: 1,
        aoi_cap,
        aoi_limit: f64::from(aoi_cap),
        dpp_weight: 30.0,
        rng_seed: 1,
    }
}

fn random_instance() -> SystemConfig {
    SystemConfig {
        num_random_sources: 1,
        num_gaw_sources: 0,
        arrival_probs: vec![0.6],
        first_error_prob: 0.3,
        harq_gain: 0.5,
        max_attempts: 1,
        aoi_cap: 2,
        aoi_limit: 2.0,
        dpp_weight: 30.0,
        rng_seed: 1,
    }
}

fn rvia_gain(cfg: &SystemConfig, beta: f64) -> (f64, usize) {
    let space = enumerate_states(cfg).unwrap();
    let table = KernelTable::build(&space, cfg);
    let opts = RviaOptions {
        epsilon: 1e-9,
        max_iterations: 2_000_000,
    };
    let result = rvia(&space, &table, beta, opts).unwrap();
    (result.avg_lagrangian, space.len())
}

fn brute_force_gain(cfg: &SystemConfig, beta: f64) -> (f64, u128) {
    let space = enumerate_states(cfg).unwrap();
    let table = KernelTable::build(&space, cfg);
    let enumeration = PolicyEnumeration::build(&space, &table, cfg);
    (
        enumeration.brute_force_min_gain(1.0, beta),
        enumeration.policy_count(),
    )
}

#[test]
fn rvia_matches_brute_force_on_tiny_gaw_instance() {
    let cfg = gaw_instance(2, 0.4);
    let (gain, states) = rvia_gain(&cfg, 1.0);
    let (brute, policies) = brute_force_gain(&cfg, 1.0);
    assert!(states <= 200);
    assert!(policies < 1u128 << 20);
    assert!(
        (gain - brute).abs() < 1e-6,
        "rvia {gain} vs brute force {brute}"
    );
}

#[test]
fn rvia_matches_brute_force_on_perfect_channel() {
    let cfg = gaw_instance(3, 0.0);
    let (gain, states) = rvia_gain(&cfg, 1.0);
    let (brute, _) = brute_force_gain(&cfg, 1.0);
    assert!(states <= 200);
    assert!((gain - brute).abs() < 1e-6);
    // Hand-computed optimum: transmitting every slot pins the age at 1 and
    // costs 1 per slot, so the best average of c + d is 2.
    assert!((gain - 2.0).abs() < 1e-6, "gain {gain}");
}

#[test]
fn rvia_matches_brute_force_on_random_arrivals() {
    let cfg = random_instance();
    let (gain, states) = rvia_gain(&cfg, 0.7);
    let (brute, _) = brute_force_gain(&cfg, 0.7);
    assert!(states <= 200);
    assert!((gain - brute).abs() < 1e-6, "rvia {gain} vs brute {brute}");
}

#[test]
fn bisection_sandwich_cross_checked_by_enumeration() {
    // Small instance where the constrained optimum is enumerable: compare
    // the bisection output against the best feasible deterministic policy
    // and the unconstrained best transmission rate.
    let cfg = SystemConfig {
        num_random_sources: 0,
        num_gaw_sources: 1,
        arrival_probs: vec![],
        first_error_prob: 0.4,
        harq_gain: 0.4,
        max_attempts: 1,
        aoi_cap: 3,
        aoi_limit: 2.0,
        dpp_weight: 30.0,
        rng_seed: 1,
    };
    let solved = bisection_solve(&cfg, SolveOptions::default()).unwrap();

    let space = enumerate_states(&cfg).unwrap();
    let table = KernelTable::build(&space, &cfg);
    let enumeration = PolicyEnumeration::build(&space, &table, &cfg);
    assert!(enumeration.policy_count() < 100_000);

    // Enumerate every deterministic policy, evaluating tau and delta
    // exactly; track the best feasible one.
    let n = space.len();
    let mut selector = vec![0usize; n];
    let mut best_feasible_tau = f64::INFINITY;
    let mut arcs: Vec<&[(usize, f64)]> = Vec::with_capacity(n);
    let mut tx_cost = vec![0.0; n];
    'outer: loop {
        arcs.clear();
        for (s, &choice) in selector.iter().enumerate() {
            let (action, action_arcs) = &enumeration.choices[s][choice];
            arcs.push(action_arcs.as_slice());
            tx_cost[s] = if action.is_transmit() { 1.0 } else { 0.0 };
        }
        let tau = common::exact_gain_from_start(&arcs, &tx_cost, 0);
        let delta = common::exact_gain_from_start(&arcs, &enumeration.aoi_cost, 0);
        if delta <= cfg.aoi_limit && tau < best_feasible_tau {
            best_feasible_tau = tau;
        }
        let mut s = 0;
        loop {
            if s == n {
                break 'outer;
            }
            selector[s] += 1;
            if selector[s] < enumeration.choices[s].len() {
                break;
            }
            selector[s] = 0;
            s += 1;
        }
    }

    // The lower bound must sit below the best feasible deterministic
    // policy, and the returned feasible policy cannot beat it.
    assert!(solved.lower_bound.tau_bar <= best_feasible_tau + 1e-9);
    assert!(solved.feasible.tau_bar + 1e-9 >= best_feasible_tau);
    assert!(solved.feasible.delta_bar <= cfg.aoi_limit + 1e-9);
    assert!(solved.lower_bound.delta_bar + 1e-9 >= cfg.aoi_limit);
    assert!(solved.lower_bound.tau_bar <= solved.feasible.tau_bar + 1e-9);
}

#[test]
fn exact_evaluation_matches_oracle_on_fixed_policy() {
    // The library's stationary evaluator against the SCC/absorption oracle
    // on a policy with genuinely transient structure.
    let cfg = SystemConfig {
        num_random_sources: 1,
        num_gaw_sources: 1,
        arrival_probs: vec![0.7],
        first_error_prob: 0.4,
        harq_gain: 0.4,
        max_attempts: 2,
        aoi_cap: 4,
        aoi_limit: 4.0,
        dpp_weight: 30.0,
        rng_seed: 1,
    };
    let space = enumerate_states(&cfg).unwrap();
    let table = KernelTable::build(&space, &cfg);
    let policy: Vec<aoi_harq::Action> = space
        .states()
        .iter()
        .map(|s| {
            let worst = s
                .sources
                .iter()
                .enumerate()
                .max_by_key(|(_, src)| src.aoi)
                .map(|(k, _)| k)
                .unwrap();
            if s.avg_aoi() >= 2.0 {
                aoi_harq::Action::TransmitFresh(worst)
            } else {
                aoi_harq::Action::Idle
            }
        })
        .collect();
    let eval = evaluate_policy(&space, &table, &policy, &cfg, EvalMode::Exact).unwrap();

    let enumeration = PolicyEnumeration::build(&space, &table, &cfg);
    let mut arcs: Vec<&[(usize, f64)]> = Vec::with_capacity(space.len());
    let mut tx_cost = vec![0.0; space.len()];
    for s in 0..space.len() {
        let (_, action_arcs) = enumeration.choices[s]
            .iter()
            .find(|(a, _)| *a == policy[s])
            .expect("policy action is feasible");
        arcs.push(action_arcs.as_slice());
        tx_cost[s] = if policy[s].is_transmit() { 1.0 } else { 0.0 };
    }
    let oracle_tau = common::exact_gain_from_start(&arcs, &tx_cost, 0);
    let oracle_delta = common::exact_gain_from_start(&arcs, &enumeration.aoi_cost, 0);
    assert!((eval.tau_bar - oracle_tau).abs() < 1e-8, "{} vs {oracle_tau}", eval.tau_bar);
    assert!((eval.delta_bar - oracle_delta).abs() < 1e-8);
}
