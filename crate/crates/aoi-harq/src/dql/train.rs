//! Deep Q-learning on the drift-plus-penalty MDP.
//!
//! The agent observes the network state (all ages plus the virtual queue),
//! picks among the feasible action codes, and receives the reward
//! `-(V * tau_t + Q_{t+1}^2 / 2 - Q_t^2 / 2)`, i.e. the negated
//! drift-plus-penalty cost. Arrival and decoding statistics stay inside the
//! environment; the agent only ever sees sampled transitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigEntries, SystemConfig};
use crate::env::{self, Action, SystemState};
use crate::error::{ConfigError, TrainError};
use crate::lyapunov::virtual_queue_update;

use super::network::{td_loss_and_grads, Adam, QNetwork, Transition};
use super::replay::ReplayBuffer;

/// Training hyperparameters. Defaults are desk-scale: a 2x64 network trains
/// on a laptop-class CPU in minutes; the full 2x256 configuration is a
/// config change.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub steps_per_episode: usize,
    pub episodes: usize,
    /// Hard-copy the online weights into the target network every this many
    /// gradient steps.
    pub target_sync: usize,
    /// If set, use a soft target update with this mixing factor instead of
    /// hard copies.
    pub target_soft_tau: Option<f64>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all training steps over which epsilon decays linearly.
    pub epsilon_decay_frac: f64,
    pub replay_capacity: usize,
    /// Minimum buffer fill before gradient steps start.
    pub replay_warmup: usize,
    pub hidden: Vec<usize>,
    /// Scale dividing the virtual queue feature; defaults to `4 * aoi_cap`.
    pub q_feature_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            discount: 0.99,
            batch_size: 32,
            steps_per_episode: 1000,
            episodes: 300,
            target_sync: 500,
            target_soft_tau: None,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_frac: 0.5,
            replay_capacity: 100_000,
            replay_warmup: 500,
            hidden: vec![64, 64],
            q_feature_scale: None,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "discount",
    "batch_size",
    "steps_per_episode",
    "episodes",
    "target_sync",
    "target_soft_tau",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_frac",
    "replay_capacity",
    "replay_warmup",
    "hidden",
    "q_feature_scale",
];

impl TrainConfig {
    pub fn from_entries(entries: &mut ConfigEntries) -> Result<Self, ConfigError> {
        let defaults = Self::default();
        let cfg = Self {
            learning_rate: entries.take_parsed_or("learning_rate", defaults.learning_rate)?,
            discount: entries.take_parsed_or("discount", defaults.discount)?,
            batch_size: entries.take_parsed_or("batch_size", defaults.batch_size)?,
            steps_per_episode: entries
                .take_parsed_or("steps_per_episode", defaults.steps_per_episode)?,
            episodes: entries.take_parsed_or("episodes", defaults.episodes)?,
            target_sync: entries.take_parsed_or("target_sync", defaults.target_sync)?,
            target_soft_tau: match entries.take("target_soft_tau") {
                None => None,
                Some(raw) => Some(raw.parse().map_err(|_| ConfigError::InvalidValue {
                    key: "target_soft_tau".into(),
                    reason: format!("cannot parse `{raw}`"),
                })?),
            },
            epsilon_start: entries.take_parsed_or("epsilon_start", defaults.epsilon_start)?,
            epsilon_end: entries.take_parsed_or("epsilon_end", defaults.epsilon_end)?,
            epsilon_decay_frac: entries
                .take_parsed_or("epsilon_decay_frac", defaults.epsilon_decay_frac)?,
            replay_capacity: entries.take_parsed_or("replay_capacity", defaults.replay_capacity)?,
            replay_warmup: entries.take_parsed_or("replay_warmup", defaults.replay_warmup)?,
            hidden: entries.take_list_or("hidden", defaults.hidden)?,
            q_feature_scale: if entries.contains("q_feature_scale") {
                Some(entries.take_parsed("q_feature_scale")?)
            } else {
                None
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "discount = {} outside (0, 1)",
                self.discount
            )));
        }
        if self.batch_size == 0 || self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(ConfigError::Invalid(
                "batch_size, episodes and steps_per_episode must be positive".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(ConfigError::Invalid("need at least one hidden layer".into()));
        }
        Ok(())
    }

    pub fn q_scale(&self, cfg: &SystemConfig) -> f64 {
        self.q_feature_scale
            .unwrap_or(4.0 * f64::from(cfg.aoi_cap))
    }
}

/// Normalized feature vector of length `4K + 1`: per source the four ages
/// scaled by their caps, then the virtual queue scaled by `q_scale`.
pub fn featurize(state: &SystemState, queue: f64, cfg: &SystemConfig, q_scale: f64) -> Vec<f64> {
    let mut features = Vec::with_capacity(4 * state.num_sources() + 1);
    let cap = f64::from(cfg.aoi_cap);
    let max_attempts = f64::from(cfg.max_attempts);
    for src in &state.sources {
        features.push(f64::from(src.fresh_age) / cap);
        features.push(f64::from(src.proc_age) / cap);
        features.push(f64::from(src.aoi) / cap);
        features.push(f64::from(src.attempts) / max_attempts);
    }
    features.push(queue / q_scale);
    features
}

/// Reward `-(V * tau + Q_after^2 / 2 - Q_before^2 / 2)`.
pub fn dpp_reward(action: Action, queue_before: f64, queue_after: f64, v_weight: f64) -> f64 {
    let tau = if action.is_transmit() { 1.0 } else { 0.0 };
    -(v_weight * tau + 0.5 * queue_after * queue_after - 0.5 * queue_before * queue_before)
}

/// Feasibility mask over action codes `0..=2K`.
pub fn feasibility_mask(state: &SystemState, cfg: &SystemConfig) -> Vec<bool> {
    let k = cfg.num_sources();
    let mut mask = vec![false; 2 * k + 1];
    for action in env::feasible_actions(state, cfg) {
        mask[action.code(k)] = true;
    }
    mask
}

/// Epsilon-greedy over the masked action codes: explore uniformly over the
/// feasible codes, otherwise take the feasible argmax of the Q-values.
/// Infeasible codes are never returned.
pub fn epsilon_greedy(
    net: &QNetwork,
    features: &[f64],
    mask: &[bool],
    epsilon: f64,
    rng: &mut impl Rng,
) -> usize {
    debug_assert!(mask.iter().any(|&m| m), "mask may not be empty");
    if rng.gen_bool(epsilon.clamp(0.0, 1.0)) {
        let feasible: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(code, &m)| m.then_some(code))
            .collect();
        feasible[rng.gen_range(0..feasible.len())]
    } else {
        greedy_code(net, features, mask)
    }
}

pub fn greedy_code(net: &QNetwork, features: &[f64], mask: &[bool]) -> usize {
    let q = net.forward(features);
    let mut best = f64::NEG_INFINITY;
    let mut best_code = usize::MAX;
    for (code, &feasible) in mask.iter().enumerate() {
        if feasible && q[code] > best {
            best = q[code];
            best_code = code;
        }
    }
    best_code
}

/// Per-episode learning-curve entry.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_return: f64,
    pub tau_bar: f64,
    pub delta_bar: f64,
    pub epsilon: f64,
}

pub const CURVE_CSV_HEADER: &str = "episode,mean_return,tau_bar,delta_bar,epsilon";

pub fn episode_csv_line(s: &EpisodeStats) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6}",
        s.episode, s.mean_return, s.tau_bar, s.delta_bar, s.epsilon
    )
}

/// Interleaved environment stepping, replay sampling and gradient updates.
/// Exposes the pieces so tests can drive single episodes and inspect the
/// target network between steps.
pub struct Trainer {
    pub cfg: SystemConfig,
    pub train_cfg: TrainConfig,
    pub net: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub gradient_steps: usize,
    pub env_steps: usize,
    total_env_steps: usize,
    episodes_run: usize,
    q_scale: f64,
}

impl Trainer {
    pub fn new(cfg: &SystemConfig, train_cfg: &TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.num_sources();
        let mut dims = vec![4 * k + 1];
        dims.extend_from_slice(&train_cfg.hidden);
        dims.push(2 * k + 1);
        let net = QNetwork::new(&dims, &mut rng);
        let target = net.clone();
        let optimizer = Adam::new(&net, train_cfg.learning_rate);
        let q_scale = train_cfg.q_scale(cfg);
        Self {
            cfg: cfg.clone(),
            train_cfg: train_cfg.clone(),
            net,
            target,
            buffer: ReplayBuffer::new(train_cfg.replay_capacity),
            optimizer,
            rng,
            gradient_steps: 0,
            env_steps: 0,
            total_env_steps: train_cfg.episodes * train_cfg.steps_per_episode,
            episodes_run: 0,
            q_scale,
        }
    }

    pub fn q_scale(&self) -> f64 {
        self.q_scale
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_frac` of all planned environment steps.
    pub fn epsilon(&self) -> f64 {
        let horizon = (self.total_env_steps as f64 * self.train_cfg.epsilon_decay_frac).max(1.0);
        let progress = (self.env_steps as f64 / horizon).min(1.0);
        self.train_cfg.epsilon_start
            + (self.train_cfg.epsilon_end - self.train_cfg.epsilon_start) * progress
    }

    /// Runs one episode from the all-zero state with a fresh virtual queue,
    /// interleaving environment steps with gradient updates.
    pub fn run_episode(&mut self) -> Result<EpisodeStats, TrainError> {
        let cfg = self.cfg.clone();
        let steps = self.train_cfg.steps_per_episode;
        // The all-zero start is a post-arrival state (fresh packet of age
        // zero); each transition below bundles the next slot's arrivals, so
        // the agent always observes its own slot's arrivals.
        let mut state = SystemState::initial(&cfg);
        let mut queue = 0.0f64;

        let mut return_sum = 0.0;
        let mut tau_sum = 0.0;
        let mut delta_sum = 0.0;
        let episode = self.episodes_run + 1;
        for _ in 0..steps {
            let epsilon = self.epsilon();
            let features = featurize(&state, queue, &cfg, self.q_scale);
            let mask = feasibility_mask(&state, &cfg);
            let code = epsilon_greedy(&self.net, &features, &mask, epsilon, &mut self.rng);
            let action = Action::from_code(code, cfg.num_sources()).expect("valid code");

            let decoded = match action {
                Action::Idle => false,
                Action::TransmitFresh(_) => self
                    .rng
                    .gen_bool(env::decode_probability(1, &cfg).expect("in range")),
                Action::Retransmit(k) => {
                    let attempts = u32::from(state.sources[k].attempts) + 1;
                    self.rng
                        .gen_bool(env::decode_probability(attempts, &cfg).expect("feasible"))
                }
            };
            delta_sum += state.avg_aoi();
            let after_action =
                env::advance_post_action(&state, action, decoded, &cfg).expect("feasible action");
            let queue_after =
                virtual_queue_update(queue, after_action.avg_aoi(), cfg.aoi_limit);
            let reward = dpp_reward(action, queue, queue_after, cfg.dpp_weight);
            let arrivals = self.sample_arrivals(&cfg);
            let next_state =
                env::apply_arrivals(&after_action, &arrivals, &cfg).expect("arrival flags sized");
            let next_features = featurize(&next_state, queue_after, &cfg, self.q_scale);
            let next_mask = feasibility_mask(&next_state, &cfg);
            self.buffer.push(Transition {
                features,
                action_code: code,
                reward,
                next_features,
                next_mask,
            });

            return_sum += reward;
            tau_sum += if action.is_transmit() { 1.0 } else { 0.0 };
            state = next_state;
            queue = queue_after;
            self.env_steps += 1;

            let warmup = self.train_cfg.replay_warmup.max(self.train_cfg.batch_size);
            if self.buffer.len() >= warmup {
                self.gradient_step(episode)?;
            }
        }
        self.episodes_run = episode;
        Ok(EpisodeStats {
            episode,
            mean_return: return_sum / steps as f64,
            tau_bar: tau_sum / steps as f64,
            delta_bar: delta_sum / steps as f64,
            epsilon: self.epsilon(),
        })
    }

    fn sample_arrivals(&mut self, cfg: &SystemConfig) -> Vec<bool> {
        (0..cfg.num_random_sources)
            .map(|k| self.rng.gen_bool(cfg.arrival_probs[k]))
            .collect()
    }

    pub fn gradient_step(&mut self, episode: usize) -> Result<(), TrainError> {
        let batch = self.buffer.sample(self.train_cfg.batch_size, &mut self.rng);
        let (loss, grads) =
            td_loss_and_grads(&self.net, &self.target, &batch, self.train_cfg.discount);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.gradient_steps,
                episode,
            });
        }
        self.optimizer.apply(&mut self.net, &grads);
        self.gradient_steps += 1;
        match self.train_cfg.target_soft_tau {
            Some(tau) => {
                for (t_layer, layer) in self.target.layers.iter_mut().zip(&self.net.layers) {
                    for (t, s) in t_layer
                        .weights
                        .iter_mut()
                        .chain(t_layer.bias.iter_mut())
                        .zip(layer.weights.iter().chain(layer.bias.iter()))
                    {
                        *t = (1.0 - tau) * *t + tau * *s;
                    }
                }
            }
            None => {
                if self.gradient_steps % self.train_cfg.target_sync == 0 {
                    self.target = self.net.clone();
                }
            }
        }
        Ok(())
    }
}

/// Trained network plus the per-episode learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub curve: Vec<EpisodeStats>,
    pub q_scale: f64,
}

pub fn train(
    cfg: &SystemConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(cfg, train_cfg, seed);
    let mut curve = Vec::with_capacity(train_cfg.episodes);
    for _ in 0..train_cfg.episodes {
        curve.push(trainer.run_episode()?);
    }
    Ok(TrainOutcome {
        network: trainer.net,
        curve,
        q_scale: trainer.q_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SourceState;

    fn cfg() -> SystemConfig {
        SystemConfig {
            num_random_sources: 1,
            num_gaw_sources: 1,
            arrival_probs: vec![0.7],
            first_error_prob: 0.3,
            harq_gain: 0.4,
            max_attempts: 5,
            aoi_cap: 18,
            aoi_limit: 4.0,
            dpp_weight: 30.0,
            rng_seed: 1,
        }
    }

    #[test]
    fn featurize_zero_state_is_zero() {
        let cfg = cfg();
        let state = SystemState::initial(&cfg);
        let features = featurize(&state, 0.0, &cfg, 72.0);
        assert_eq!(features.len(), 4 * 2 + 1);
        assert!(features.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn featurize_saturated_aoi_hits_one() {
        let cfg = cfg();
        let mut state = SystemState::initial(&cfg);
        state.sources[1] = SourceState::new(0, 18, 18, 2);
        let features = featurize(&state, 0.0, &cfg, 72.0);
        // Source 1 occupies slots 4..8: fresh, proc, aoi, attempts.
        assert_eq!(features[6], 1.0);
        assert_eq!(features[5], 1.0);
        assert_eq!(features[7], 2.0 / 5.0);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(dpp_reward(Action::Idle, 0.0, 0.0, 30.0), 0.0);
        assert_eq!(
            dpp_reward(Action::TransmitFresh(0), 2.0, 4.0, 30.0),
            -(30.0 + 8.0 - 2.0)
        );
        // Negative drift while idle earns a positive reward.
        assert!(dpp_reward(Action::Idle, 3.0, 1.0, 30.0) > 0.0);
    }

    #[test]
    fn epsilon_one_explores_uniformly() {
        let cfg = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetwork::new(&[9, 8, 5], &mut rng);
        let mask = vec![true, true, false, true, true];
        let features = vec![0.1; 9];
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            counts[epsilon_greedy(&net, &features, &mask, 1.0, &mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        // Chi-square against uniform over the 4 feasible codes, 3 dof;
        // 16.27 is the 0.001 critical value.
        let expected = draws as f64 / 4.0;
        let chi2: f64 = [0usize, 1, 3, 4]
            .iter()
            .map(|&c| {
                let diff = counts[c] as f64 - expected;
                diff * diff / expected
            })
            .sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn epsilon_zero_takes_the_greedy_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = QNetwork::new(&[3, 4, 3], &mut rng);
        // Force the idle output unit to dominate.
        let last = net.layers.last_mut().unwrap();
        last.bias[0] = 100.0;
        let mask = vec![true, true, true];
        let code = epsilon_greedy(&net, &[0.2, 0.1, 0.0], &mask, 0.0, &mut rng);
        assert_eq!(code, 0);
    }

    #[test]
    fn masked_codes_are_never_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = QNetwork::new(&[9, 8, 5], &mut rng);
        let mask = vec![true, false, true, false, false];
        let features = vec![0.3; 9];
        for i in 0..100_000 {
            let eps = if i % 2 == 0 { 1.0 } else { 0.0 };
            let code = epsilon_greedy(&net, &features, &mask, eps, &mut rng);
            assert!(mask[code]);
        }
    }

    #[test]
    fn target_changes_only_at_sync_points() {
        let cfg = cfg();
        let train_cfg = TrainConfig {
            episodes: 1,
            steps_per_episode: 64,
            batch_size: 8,
            replay_warmup: 8,
            target_sync: 10,
            hidden: vec![8],
            ..Default::default()
        };
        let mut trainer = Trainer::new(&cfg, &train_cfg, 3);
        let snapshot = |net: &QNetwork| -> Vec<f64> {
            net.layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.bias).copied().collect::<Vec<_>>())
                .collect()
        };
        let initial_target = snapshot(&trainer.target);
        trainer.run_episode().unwrap();
        // 64 steps, warmup 8: gradient steps happen from step 8 on, so the
        // target was refreshed at sync points and differs now, while between
        // syncs it must equal the online net exactly as of the last sync.
        assert!(trainer.gradient_steps > 10);
        assert_ne!(snapshot(&trainer.target), initial_target);
        let at_last_sync = snapshot(&trainer.target);
        let steps_past_sync = trainer.gradient_steps % train_cfg.target_sync;
        if steps_past_sync != 0 {
            assert_ne!(snapshot(&trainer.net), at_last_sync);
        }
    }

    #[test]
    fn episode_trajectories_only_contain_feasible_actions() {
        let cfg = SystemConfig {
            max_attempts: 1,
            ..cfg()
        };
        let train_cfg = TrainConfig {
            episodes: 1,
            steps_per_episode: 300,
            batch_size: 8,
            replay_warmup: 16,
            hidden: vec![8],
            ..Default::default()
        };
        let mut trainer = Trainer::new(&cfg, &train_cfg, 9);
        trainer.run_episode().unwrap();
        // With max_attempts = 1, retransmission is only ever feasible from
        // the untouched memory slot; the trainer would have panicked in
        // advance_post_action had the mask been violated, so reaching this
        // point with a filled buffer is the assertion.
        assert!(trainer.buffer.len() > 0);
    }

    #[test]
    fn near_idle_environment_learns_to_rarely_transmit() {
        // Perfect channel, single generate-at-will source, slack AoI limit,
        // heavy transmission penalty: near-idle policies are near-optimal.
        let cfg = SystemConfig {
            num_random_sources: 0,
            num_gaw_sources: 1,
            arrival_probs: vec![],
            first_error_prob: 0.0,
            harq_gain: 0.4,
            max_attempts: 5,
            aoi_cap: 12,
            aoi_limit: 10.0,
            dpp_weight: 50.0,
            rng_seed: 1,
        };
        let train_cfg = TrainConfig {
            episodes: 60,
            steps_per_episode: 300,
            batch_size: 16,
            replay_warmup: 64,
            target_sync: 200,
            hidden: vec![32],
            ..Default::default()
        };
        let outcome = train(&cfg, &train_cfg, 11).unwrap();
        // Greedy evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut state = SystemState::initial(&cfg);
        let mut queue = 0.0;
        let mut tau = 0.0;
        let slots = 20_000;
        for _ in 0..slots {
            let features = featurize(&state, queue, &cfg, outcome.q_scale);
            let mask = feasibility_mask(&state, &cfg);
            let code = greedy_code(&outcome.network, &features, &mask);
            let action = Action::from_code(code, 1).unwrap();
            let out = env::step(&state, action, &mut rng, &cfg).unwrap();
            queue = virtual_queue_update(queue, out.next_state.avg_aoi(), cfg.aoi_limit);
            tau += out.cost;
            state = out.next_state;
        }
        let tau_bar = tau / slots as f64;
        assert!(tau_bar < 0.2, "tau_bar = {tau_bar}");
    }
}
