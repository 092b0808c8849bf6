//! Multi-seed Monte-Carlo simulation of a controller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::env;
use crate::error::SimError;
use crate::lyapunov::{virtual_queue_update, SlotRecord};

use super::controllers::Controller;

/// Fraction of each run excluded from per-seed aggregates, approximating the
/// limit averages at finite horizons. The full running series is kept.
pub const DEFAULT_BURN_IN: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct SeedOutcome {
    pub seed: u64,
    pub tau_bar: f64,
    pub delta_bar: f64,
}

/// Aggregated metrics over independent seeded rollouts.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub tau_bar: f64,
    /// 95% halfwidth across seeds (Student-t).
    pub tau_ci: f64,
    pub delta_bar: f64,
    pub delta_ci: f64,
    pub per_seed: Vec<SeedOutcome>,
    /// Running `(tau_bar_t, delta_bar_t)` averaged across seeds.
    pub running: Vec<(f64, f64)>,
    /// Per-slot records of the first seed's rollout.
    pub first_seed_records: Vec<SlotRecord>,
    pub config: SystemConfig,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub burn_in_slots: usize,
}

impl RunMetrics {
    pub fn feasible(&self) -> bool {
        self.delta_bar <= self.config.aoi_limit + self.delta_ci
    }
}

/// Rolls the controller out once per seed (seeds run in parallel, each with
/// its own rng and cloned controller) and aggregates the post-burn-in
/// averages. Identical `(controller, cfg, seeds, horizon)` inputs reproduce
/// the series bit for bit.
pub fn simulate<C>(
    controller: &C,
    cfg: &SystemConfig,
    horizon: usize,
    seeds: &[u64],
) -> Result<RunMetrics, SimError>
where
    C: Controller + Clone + Send + Sync,
{
    simulate_with_burn_in(controller, cfg, horizon, seeds, DEFAULT_BURN_IN)
}

pub fn simulate_with_burn_in<C>(
    controller: &C,
    cfg: &SystemConfig,
    horizon: usize,
    seeds: &[u64],
    burn_in: f64,
) -> Result<RunMetrics, SimError>
where
    C: Controller + Clone + Send + Sync,
{
    assert!(horizon >= 1 && !seeds.is_empty());
    let burn_in_slots = (horizon as f64 * burn_in) as usize;
    let rollouts: Vec<Result<Vec<SlotRecord>, SimError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut ctrl = controller.clone();
            rollout(&mut ctrl, cfg, horizon, seed)
        })
        .collect();

    let mut runs = Vec::with_capacity(seeds.len());
    for r in rollouts {
        runs.push(r?);
    }

    let per_seed: Vec<SeedOutcome> = seeds
        .iter()
        .zip(&runs)
        .map(|(&seed, records)| {
            let kept = &records[burn_in_slots..];
            let n = kept.len() as f64;
            let tau: f64 = kept.iter().map(|r| ((r.action_code != 0) as u8) as f64).sum();
            let delta: f64 = kept.iter().map(|r| r.avg_aoi).sum();
            SeedOutcome {
                seed,
                tau_bar: tau / n,
                delta_bar: delta / n,
            }
        })
        .collect();

    let running: Vec<(f64, f64)> = (0..horizon)
        .map(|t| {
            let mut tau = 0.0;
            let mut delta = 0.0;
            for records in &runs {
                tau += records[t].running_tau_bar;
                delta += records[t].running_delta_bar;
            }
            let n = runs.len() as f64;
            (tau / n, delta / n)
        })
        .collect();

    let taus: Vec<f64> = per_seed.iter().map(|s| s.tau_bar).collect();
    let deltas: Vec<f64> = per_seed.iter().map(|s| s.delta_bar).collect();
    let (tau_bar, tau_ci) = mean_and_halfwidth(&taus);
    let (delta_bar, delta_ci) = mean_and_halfwidth(&deltas);

    Ok(RunMetrics {
        tau_bar,
        tau_ci,
        delta_bar,
        delta_ci,
        per_seed,
        running,
        first_seed_records: runs.into_iter().next().unwrap(),
        config: cfg.clone(),
        seeds: seeds.to_vec(),
        horizon,
        burn_in_slots,
    })
}

/// One seeded rollout. Decisions are taken on the post-arrival state (the
/// all-zero start counts as one, holding a fresh packet of age zero); the
/// transition then applies the decode outcome and the next slot's arrivals
/// in one step, exactly like the enumerated kernel, so table policies never
/// leave their state space.
fn rollout<C: Controller>(
    controller: &mut C,
    cfg: &SystemConfig,
    horizon: usize,
    seed: u64,
) -> Result<Vec<SlotRecord>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    controller.reset();
    let num_sources = cfg.num_sources();
    let mut state = env::SystemState::initial(cfg);
    let mut queue = 0.0f64;
    let mut records = Vec::with_capacity(horizon);
    let mut tau_sum = 0.0;
    let mut delta_sum = 0.0;
    for slot in 1..=horizon {
        let action = controller.select_action(&state, queue, cfg, &mut rng)?;
        let decision_aoi = state.avg_aoi();
        let outcome = env::step(&state, action, &mut rng, cfg)?;
        state = outcome.next_state;
        queue = virtual_queue_update(queue, outcome.aoi_cost, cfg.aoi_limit);
        controller.record_outcome(action, outcome.decoded, &state, cfg);

        tau_sum += outcome.cost;
        delta_sum += decision_aoi;
        records.push(SlotRecord {
            slot,
            action_code: action.code(num_sources),
            decoded: outcome.decoded,
            avg_aoi: decision_aoi,
            running_tau_bar: tau_sum / slot as f64,
            running_delta_bar: delta_sum / slot as f64,
            queue,
        });
    }
    Ok(records)
}

/// Mean and 95% halfwidth across seeds via Student's t.
fn mean_and_halfwidth(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, t_quantile_975(values.len() - 1) * (var / n).sqrt())
}

/// 0.975 quantile of Student's t.
fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= TABLE.len() {
        TABLE[df - 1]
    } else {
        1.96
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::controllers::{AllIdleController, LcdtController};

    fn cfg() -> SystemConfig {
        SystemConfig {
            num_random_sources: 1,
            num_gaw_sources: 1,
            arrival_probs: vec![0.7],
            first_error_prob: 0.4,
            harq_gain: 0.4,
            max_attempts: 5,
            aoi_cap: 18,
            aoi_limit: 4.0,
            dpp_weight: 30.0,
            rng_seed: 1,
        }
    }

    #[test]
    fn all_idle_never_transmits() {
        let metrics = simulate(&AllIdleController, &cfg(), 5_000, &[1, 2, 3]).unwrap();
        assert_eq!(metrics.tau_bar, 0.0);
        assert_eq!(metrics.tau_ci, 0.0);
        assert!((metrics.delta_bar - 18.0).abs() < 0.2);
    }

    #[test]
    fn identical_inputs_reproduce_identical_series() {
        let cfg = cfg();
        let a = simulate(&LcdtController, &cfg, 2_000, &[7, 8]).unwrap();
        let b = simulate(&LcdtController, &cfg, 2_000, &[7, 8]).unwrap();
        assert_eq!(a.running.len(), b.running.len());
        for (x, y) in a.running.iter().zip(&b.running) {
            assert_eq!(x, y);
        }
        assert_eq!(a.tau_bar, b.tau_bar);
        assert_eq!(a.delta_bar, b.delta_bar);
    }

    #[test]
    fn doubling_the_horizon_shrinks_the_ci_roughly_root_two() {
        // Across-seed CI scales as 1/sqrt(T) through the per-seed variance.
        let cfg = cfg();
        let seeds: Vec<u64> = (0..16).collect();
        let short = simulate(&LcdtController, &cfg, 8_000, &seeds).unwrap();
        let long = simulate(&LcdtController, &cfg, 16_000, &seeds).unwrap();
        let ratio = long.tau_ci / short.tau_ci;
        let expected = 1.0 / 2.0f64.sqrt();
        assert!(
            (ratio - expected).abs() <= 0.3 * expected + 0.05,
            "ratio {ratio}"
        );
    }

    #[test]
    fn running_averages_stay_in_range() {
        let metrics = simulate(&LcdtController, &cfg(), 3_000, &[5]).unwrap();
        for &(tau, delta) in &metrics.running {
            assert!((0.0..=1.0).contains(&tau));
            assert!((0.0..=18.0).contains(&delta));
        }
    }
}
