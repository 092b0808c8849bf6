//! Self-check suites comparing independent computation routes.
//!
//! Each suite samples random instances and states, evaluates two routes of
//! the same quantity, and reports the worst observed discrepancy. The CLI
//! `verify` subcommand runs all of them and fails on any violation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SystemConfig;
use crate::dql::{td_loss_and_grads, QNetwork, Transition};
use crate::env::{self, SourceState, SystemState};
use crate::lyapunov::{dpp_objective, expected_next_aoi, expected_next_aoi_sq, NetworkState};

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} over {} checks (max error {:.3e}, tolerance {:.1e})",
            self.name,
            if self.passed { "ok" } else { "FAILED" },
            self.checks,
            self.max_error,
            self.tolerance
        )
    }
}

/// Random instance small enough to enumerate branch products quickly but
/// covering multiple sources, attempt limits and cap saturation.
pub fn random_config(rng: &mut impl Rng) -> SystemConfig {
    let num_random_sources = rng.gen_range(0..=2usize);
    let num_gaw_sources = rng.gen_range(if num_random_sources == 0 { 1 } else { 0 }..=2usize);
    let aoi_cap = rng.gen_range(3..=15u16);
    SystemConfig {
        num_random_sources,
        num_gaw_sources,
        arrival_probs: (0..num_random_sources)
            .map(|_| rng.gen_range(0.05..=1.0))
            .collect(),
        first_error_prob: rng.gen_range(0.0..=1.0),
        harq_gain: rng.gen_range(0.0..=1.0),
        max_attempts: rng.gen_range(1..=4u8),
        aoi_cap,
        aoi_limit: rng.gen_range(1.0..=f64::from(aoi_cap)),
        dpp_weight: rng.gen_range(1.0..=100.0),
        rng_seed: rng.gen(),
    }
}

/// Random state satisfying the per-source invariants (ordered ages, capped
/// values, zero fresh age for generate-at-will sources).
pub fn random_state(cfg: &SystemConfig, rng: &mut impl Rng) -> SystemState {
    let sources = (0..cfg.num_sources())
        .map(|k| {
            let aoi = rng.gen_range(0..=cfg.aoi_cap);
            let proc_age = rng.gen_range(0..=aoi);
            let fresh_age = if cfg.is_gaw(k) {
                0
            } else {
                rng.gen_range(0..=proc_age)
            };
            let attempts = rng.gen_range(0..=cfg.max_attempts);
            SourceState::new(fresh_age, proc_age, aoi, attempts)
        })
        .collect();
    SystemState { sources }
}

/// Closed-form conditional expectations against kernel enumeration:
/// `E[avg_aoi']` and `E[avg_aoi'^2]` for random `(state, action)` pairs.
pub fn lemma_oracle_suite(pairs: usize, seed: u64) -> SuiteReport {
    let tolerance = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut checks = 0;
    while checks < pairs {
        let cfg = random_config(&mut rng);
        let state = random_state(&cfg, &mut rng);
        for action in env::feasible_actions(&state, &cfg) {
            if checks >= pairs {
                break;
            }
            let kernel = env::transition_kernel(&state, action, &cfg).expect("feasible");
            let mean: f64 = kernel.iter().map(|(s, p)| p * s.avg_aoi()).sum();
            let second: f64 = kernel
                .iter()
                .map(|(s, p)| p * s.avg_aoi() * s.avg_aoi())
                .sum();
            let lemma_mean = expected_next_aoi(&state, action, &cfg);
            let lemma_second = expected_next_aoi_sq(&state, action, &cfg);
            max_error = max_error
                .max((lemma_mean - mean).abs())
                .max((lemma_second - second).abs());
            checks += 1;
        }
    }
    SuiteReport {
        name: "lemma-oracle",
        checks,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}

/// Expanded drift-plus-penalty bound against its recomposition from the two
/// conditional expectations.
pub fn dpp_bound_suite(pairs: usize, seed: u64) -> SuiteReport {
    let tolerance = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut checks = 0;
    while checks < pairs {
        let cfg = random_config(&mut rng);
        let state = random_state(&cfg, &mut rng);
        let queue = rng.gen_range(0.0..=200.0);
        let o = NetworkState {
            system: state.clone(),
            queue,
        };
        for action in env::feasible_actions(&state, &cfg) {
            if checks >= pairs {
                break;
            }
            let direct = dpp_objective(&o, action, &cfg);
            let tau = if action.is_transmit() { 1.0 } else { 0.0 };
            let recomposed = cfg.dpp_weight * tau
                + 0.5
                    * (cfg.aoi_limit * cfg.aoi_limit
                        + expected_next_aoi_sq(&state, action, &cfg)
                        + 2.0 * queue * (expected_next_aoi(&state, action, &cfg) - cfg.aoi_limit));
            max_error = max_error.max((direct - recomposed).abs());
            checks += 1;
        }
    }
    SuiteReport {
        name: "dpp-bound",
        checks,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}

/// Kernel normalization: enumerated successor probabilities sum to one.
pub fn kernel_normalization_suite(samples: usize, seed: u64) -> SuiteReport {
    let tolerance = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut checks = 0;
    while checks < samples {
        let cfg = random_config(&mut rng);
        let state = random_state(&cfg, &mut rng);
        for action in env::feasible_actions(&state, &cfg) {
            if checks >= samples {
                break;
            }
            let total: f64 = env::transition_kernel(&state, action, &cfg)
                .expect("feasible")
                .iter()
                .map(|(_, p)| p)
                .sum();
            max_error = max_error.max((total - 1.0).abs());
            checks += 1;
        }
    }
    SuiteReport {
        name: "kernel-normalization",
        checks,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}

/// Analytic TD-loss gradient of a small network against central finite
/// differences, relative error.
pub fn gradient_check_suite(seed: u64) -> SuiteReport {
    let tolerance = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(&[6, 10, 4], &mut rng);
    let target = QNetwork::new(&[6, 10, 4], &mut rng);
    let gamma = 0.97;
    let batch_data: Vec<Transition> = (0..8)
        .map(|i| Transition {
            features: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action_code: i % 4,
            reward: rng.gen_range(-5.0..1.0),
            next_features: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            next_mask: vec![true, i % 2 == 0, true, i % 3 != 0],
        })
        .collect();
    let batch: Vec<&Transition> = batch_data.iter().collect();
    let (_, grads) = td_loss_and_grads(&net, &target, &batch, gamma);

    let h = 1e-6;
    let mut max_error: f64 = 0.0;
    let mut checks = 0;
    for index in 0..net.param_count() {
        let base = net.get_param(index);
        let mut plus = net.clone();
        plus.set_param(index, base + h);
        let (lp, _) = td_loss_and_grads(&plus, &target, &batch, gamma);
        let mut minus = net.clone();
        minus.set_param(index, base - h);
        let (lm, _) = td_loss_and_grads(&minus, &target, &batch, gamma);
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grads.get_flat(index);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            continue;
        }
        max_error = max_error.max((analytic - numeric).abs() / scale);
        checks += 1;
    }
    SuiteReport {
        name: "gradient-check",
        checks,
        max_error,
        tolerance,
        passed: checks > 20 && max_error <= tolerance,
    }
}

/// Every suite at its default size, as run by the CLI.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        lemma_oracle_suite(10_000, seed),
        dpp_bound_suite(10_000, seed.wrapping_add(1)),
        kernel_normalization_suite(10_000, seed.wrapping_add(2)),
        gradient_check_suite(seed.wrapping_add(3)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_module_scale() {
        for report in [
            lemma_oracle_suite(500, 1),
            dpp_bound_suite(500, 2),
            kernel_normalization_suite(500, 3),
            gradient_check_suite(4),
        ] {
            assert!(report.passed, "{report}");
        }
    }

    #[test]
    fn random_states_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let cfg = random_config(&mut rng);
            assert!(cfg.validate().is_ok());
            let state = random_state(&cfg, &mut rng);
            assert!(state.satisfies_invariants(&cfg));
        }
    }
}
