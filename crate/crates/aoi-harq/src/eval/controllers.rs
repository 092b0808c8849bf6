//! Controllers runnable by the simulation loop.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cmdp::StateSpace;
use crate::config::SystemConfig;
use crate::dql::{featurize, feasibility_mask, greedy_code, QNetwork};
use crate::env::{Action, SystemState};
use crate::error::SimError;
use crate::lyapunov::{select_action, NetworkState};

/// A per-slot decision rule. The simulation loop owns the environment state
/// and the virtual queue; controllers see the post-arrival state and the
/// queue backlog and may keep their own bookkeeping via `record_outcome`.
pub trait Controller {
    fn reset(&mut self) {}

    fn select_action(
        &mut self,
        state: &SystemState,
        queue: f64,
        cfg: &SystemConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action, SimError>;

    fn record_outcome(
        &mut self,
        _action: Action,
        _decoded: bool,
        _next: &SystemState,
        _cfg: &SystemConfig,
    ) {
    }
}

/// Never transmits.
#[derive(Debug, Clone, Default)]
pub struct AllIdleController;

impl Controller for AllIdleController {
    fn select_action(
        &mut self,
        _state: &SystemState,
        _queue: f64,
        _cfg: &SystemConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Action, SimError> {
        Ok(Action::Idle)
    }
}

/// Per-slot drift-plus-penalty minimizer.
#[derive(Debug, Clone, Default)]
pub struct LcdtController;

impl Controller for LcdtController {
    fn select_action(
        &mut self,
        state: &SystemState,
        queue: f64,
        cfg: &SystemConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Action, SimError> {
        let o = NetworkState {
            system: state.clone(),
            queue,
        };
        Ok(select_action(&o, cfg))
    }
}

/// Looks decisions up in a solved policy table.
#[derive(Clone)]
pub struct TablePolicyController {
    space: Arc<StateSpace>,
    actions: Arc<Vec<Action>>,
}

impl TablePolicyController {
    pub fn new(space: Arc<StateSpace>, actions: Arc<Vec<Action>>) -> Self {
        assert_eq!(space.len(), actions.len(), "table must cover the space");
        Self { space, actions }
    }
}

impl Controller for TablePolicyController {
    fn select_action(
        &mut self,
        state: &SystemState,
        _queue: f64,
        _cfg: &SystemConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Action, SimError> {
        match self.space.index_of(state) {
            Some(index) => Ok(self.actions[index]),
            None => Err(SimError::PolicyLookup {
                state: state.to_string(),
            }),
        }
    }
}

/// Greedy head of a trained Q-network.
#[derive(Clone)]
pub struct DqlGreedyController {
    net: Arc<QNetwork>,
    q_scale: f64,
}

impl DqlGreedyController {
    pub fn new(net: Arc<QNetwork>, q_scale: f64) -> Self {
        Self { net, q_scale }
    }
}

impl Controller for DqlGreedyController {
    fn select_action(
        &mut self,
        state: &SystemState,
        queue: f64,
        cfg: &SystemConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Action, SimError> {
        let features = featurize(state, queue, cfg, self.q_scale);
        let mask = feasibility_mask(state, cfg);
        let code = greedy_code(&self.net, &features, &mask);
        Ok(Action::from_code(code, cfg.num_sources()).expect("greedy code valid"))
    }
}

/// Threshold baseline: transmit a fresh packet from the highest-AoI source
/// whenever the average AoI reaches the limit (uniform tie-break), and once
/// a transmission fails keep retransmitting that packet at consecutive
/// slots until it decodes or hits the attempt cap, regardless of the
/// average AoI in between.
#[derive(Debug, Clone, Default)]
pub struct BaselineController {
    pending: Option<usize>,
}

impl BaselineController {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Controller for BaselineController {
    fn reset(&mut self) {
        self.pending = None;
    }

    fn select_action(
        &mut self,
        state: &SystemState,
        _queue: f64,
        cfg: &SystemConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action, SimError> {
        if let Some(k) = self.pending {
            return Ok(Action::Retransmit(k));
        }
        if state.avg_aoi() >= cfg.aoi_limit {
            let max_aoi = state.sources.iter().map(|s| s.aoi).max().unwrap();
            let candidates: Vec<usize> = state
                .sources
                .iter()
                .enumerate()
                .filter_map(|(k, s)| (s.aoi == max_aoi).then_some(k))
                .collect();
            let pick = candidates[rng.gen_range(0..candidates.len())];
            return Ok(Action::TransmitFresh(pick));
        }
        Ok(Action::Idle)
    }

    fn record_outcome(
        &mut self,
        action: Action,
        decoded: bool,
        next: &SystemState,
        cfg: &SystemConfig,
    ) {
        self.pending = match action.source() {
            Some(k)
                if !decoded
                    && u16::from(next.sources[k].attempts) + 1 <= u16::from(cfg.max_attempts) =>
            {
                Some(k)
            }
            _ => None,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SourceState;
    use rand::SeedableRng;

    fn cfg() -> SystemConfig {
        SystemConfig {
            num_random_sources: 0,
            num_gaw_sources: 2,
            arrival_probs: vec![],
            first_error_prob: 0.4,
            harq_gain: 0.4,
            max_attempts: 5,
            aoi_cap: 18,
            aoi_limit: 4.0,
            dpp_weight: 30.0,
            rng_seed: 1,
        }
    }

    fn state(aois: &[u16]) -> SystemState {
        SystemState {
            sources: aois
                .iter()
                .map(|&a| SourceState::new(0, a.min(3), a, 1))
                .collect(),
        }
    }

    #[test]
    fn baseline_idles_below_the_limit() {
        let cfg = cfg();
        let mut ctrl = BaselineController::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let action = ctrl
            .select_action(&state(&[3, 2]), 0.0, &cfg, &mut rng)
            .unwrap();
        assert_eq!(action, Action::Idle);
    }

    #[test]
    fn baseline_picks_the_largest_aoi_source() {
        let cfg = cfg();
        let mut ctrl = BaselineController::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let action = ctrl
            .select_action(&state(&[7, 3]), 0.0, &cfg, &mut rng)
            .unwrap();
        assert_eq!(action, Action::TransmitFresh(0));
    }

    #[test]
    fn baseline_breaks_ties_uniformly() {
        let cfg = cfg();
        let mut ctrl = BaselineController::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut first = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            match ctrl.select_action(&state(&[6, 6]), 0.0, &cfg, &mut rng).unwrap() {
                Action::TransmitFresh(0) => first += 1,
                Action::TransmitFresh(1) => {}
                other => panic!("unexpected action {other}"),
            }
        }
        let share = first as f64 / trials as f64;
        assert!((share - 0.5).abs() < 0.02, "share = {share}");
    }

    #[test]
    fn baseline_persists_after_a_failure() {
        let cfg = cfg();
        let mut ctrl = BaselineController::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = state(&[7, 3]);
        let action = ctrl.select_action(&s, 0.0, &cfg, &mut rng).unwrap();
        assert_eq!(action, Action::TransmitFresh(0));
        // Transmission failed; AoI drops below the limit next slot but the
        // baseline still retransmits.
        let mut next = s.clone();
        next.sources[0].attempts = 1;
        ctrl.record_outcome(action, false, &next, &cfg);
        let low_aoi = state(&[2, 1]);
        let follow_up = ctrl.select_action(&low_aoi, 0.0, &cfg, &mut rng).unwrap();
        assert_eq!(follow_up, Action::Retransmit(0));
    }

    #[test]
    fn baseline_stops_at_the_attempt_cap() {
        let cfg = cfg();
        let mut ctrl = BaselineController::new();
        let mut s = state(&[7, 3]);
        s.sources[0].attempts = cfg.max_attempts;
        ctrl.record_outcome(Action::Retransmit(0), false, &s, &cfg);
        assert_eq!(ctrl.pending, None);
        ctrl.record_outcome(Action::Retransmit(0), true, &s, &cfg);
        assert_eq!(ctrl.pending, None);
    }
}
