//! Multi-source HARQ status-update dynamics.
//!
//! Each source `k` carries four age counters, all in slots and all capped at
//! `aoi_cap`:
//!
//! * `fresh_age` — age of the newest packet available for a first
//!   transmission (always 0 for generate-at-will sources),
//! * `proc_age` — age of the under-process packet retained in the
//!   transmitter memory for HARQ retransmission,
//! * `aoi` — age of information at the receiver,
//! * `attempts` — how many times the under-process packet has been sent.
//!
//! Per slot the transmitter either stays idle, sends a fresh packet from one
//! source, or retransmits one under-process packet. A transmission with
//! attempt count `x` decodes with probability `f(x) = 1 - p0 * eta^(x-1)`,
//! and decoding feedback is instantaneous and error-free. Random-arrival
//! sources receive a fresh packet at the start of each slot with probability
//! `lambda_k`, overwriting their one-packet buffer.

use rand::Rng;

use crate::config::SystemConfig;
use crate::error::EnvError;

/// Per-source age tuple `(fresh_age, proc_age, aoi, attempts)`.
///
/// In every state reachable from the all-zero start, `fresh_age <= proc_age
/// <= aoi` holds; the ordering is preserved by each branch of the age
/// recursions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceState {
    pub fresh_age: u16,
    pub proc_age: u16,
    pub aoi: u16,
    pub attempts: u8,
}

impl SourceState {
    pub const ZERO: SourceState = SourceState {
        fresh_age: 0,
        proc_age: 0,
        aoi: 0,
        attempts: 0,
    };

    pub fn new(fresh_age: u16, proc_age: u16, aoi: u16, attempts: u8) -> Self {
        Self {
            fresh_age,
            proc_age,
            aoi,
            attempts,
        }
    }

    fn satisfies_invariants(&self, cfg: &SystemConfig, gaw: bool) -> bool {
        self.fresh_age <= self.proc_age
            && self.proc_age <= self.aoi
            && self.aoi <= cfg.aoi_cap
            && self.attempts <= cfg.max_attempts
            && (!gaw || self.fresh_age == 0)
    }
}

/// Full system state: one [`SourceState`] per source, random-arrival sources
/// first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SystemState {
    pub sources: Vec<SourceState>,
}

impl SystemState {
    /// The all-zero initial state.
    pub fn initial(cfg: &SystemConfig) -> Self {
        Self {
            sources: vec![SourceState::ZERO; cfg.num_sources()],
        }
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Average AoI over all sources at this slot.
    pub fn avg_aoi(&self) -> f64 {
        avg_aoi(self)
    }

    pub fn satisfies_invariants(&self, cfg: &SystemConfig) -> bool {
        self.sources.len() == cfg.num_sources()
            && self
                .sources
                .iter()
                .enumerate()
                .all(|(k, s)| s.satisfies_invariants(cfg, cfg.is_gaw(k)))
    }
}

impl std::fmt::Display for SystemState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (k, s) in self.sources.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "({},{},{},{})", s.fresh_age, s.proc_age, s.aoi, s.attempts)?;
        }
        write!(f, "]")
    }
}

/// One transmitter decision. Source indices are 0-based.
///
/// The derived ordering `Idle < TransmitFresh(0) < ... < Retransmit(K-1)` is
/// the fixed tie-break order used by every argmin in the crate, so policies
/// are reproducible across runs and platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Idle,
    TransmitFresh(usize),
    Retransmit(usize),
}

impl Action {
    pub fn is_transmit(&self) -> bool {
        !matches!(self, Action::Idle)
    }

    pub fn source(&self) -> Option<usize> {
        match *self {
            Action::Idle => None,
            Action::TransmitFresh(k) | Action::Retransmit(k) => Some(k),
        }
    }

    /// Numeric code: 0 for idle, `1 + k` for a fresh transmission from
    /// source `k`, `1 + K + k` for a retransmission. Used in policy tables
    /// and CSV output.
    pub fn code(&self, num_sources: usize) -> usize {
        match *self {
            Action::Idle => 0,
            Action::TransmitFresh(k) => 1 + k,
            Action::Retransmit(k) => 1 + num_sources + k,
        }
    }

    pub fn from_code(code: usize, num_sources: usize) -> Option<Action> {
        if code == 0 {
            Some(Action::Idle)
        } else if code <= num_sources {
            Some(Action::TransmitFresh(code - 1))
        } else if code <= 2 * num_sources {
            Some(Action::Retransmit(code - num_sources - 1))
        } else {
            None
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Action::Idle => write!(f, "idle"),
            Action::TransmitFresh(k) => write!(f, "fresh({k})"),
            Action::Retransmit(k) => write!(f, "retx({k})"),
        }
    }
}

/// Result of one stochastic slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SystemState,
    /// Whether the transmitted packet decoded; always false for idle slots.
    pub decoded: bool,
    /// Arrival flags sampled for the next slot, one per random-arrival source.
    pub arrivals: Vec<bool>,
    /// Transmission cost: 1 if a packet was sent, else 0.
    pub cost: f64,
    /// Average AoI of the next state.
    pub aoi_cost: f64,
}

/// Probability that a packet decodes after `attempts` transmissions:
/// `f(x) = 1 - p0 * eta^(x-1)`.
///
/// Non-decreasing in `x`; equals `1 - p0` at the first attempt.
pub fn decode_probability(attempts: u32, cfg: &SystemConfig) -> Result<f64, EnvError> {
    if attempts < 1 || attempts > u32::from(cfg.max_attempts) {
        return Err(EnvError::AttemptsOutOfRange {
            attempts,
            max: u32::from(cfg.max_attempts),
        });
    }
    Ok(1.0 - cfg.first_error_prob * cfg.harq_gain.powi(attempts as i32 - 1))
}

/// Feasible decisions in `state`, in the fixed tie-break order.
///
/// Idle and every fresh transmission are always allowed; retransmitting
/// source `k` requires `attempts_k + 1 <= max_attempts`. At most `2K + 1`
/// actions.
pub fn feasible_actions(state: &SystemState, cfg: &SystemConfig) -> Vec<Action> {
    let k = state.num_sources();
    let mut actions = Vec::with_capacity(2 * k + 1);
    actions.push(Action::Idle);
    for i in 0..k {
        actions.push(Action::TransmitFresh(i));
    }
    for (i, src) in state.sources.iter().enumerate() {
        if u16::from(src.attempts) + 1 <= u16::from(cfg.max_attempts) {
            actions.push(Action::Retransmit(i));
        }
    }
    actions
}

pub fn action_is_feasible(state: &SystemState, action: Action, cfg: &SystemConfig) -> bool {
    match action {
        Action::Idle => true,
        Action::TransmitFresh(k) => k < state.num_sources(),
        Action::Retransmit(k) => {
            k < state.num_sources()
                && u16::from(state.sources[k].attempts) + 1 <= u16::from(cfg.max_attempts)
        }
    }
}

#[inline]
fn capped_inc(age: u16, cap: u16) -> u16 {
    age.saturating_add(1).min(cap)
}

/// Fresh-age recursion: a random-arrival source resets to 0 on an arrival and
/// otherwise increments (capped); generate-at-will sources stay at 0.
pub fn apply_arrivals(
    state: &SystemState,
    arrivals: &[bool],
    cfg: &SystemConfig,
) -> Result<SystemState, EnvError> {
    if arrivals.len() != cfg.num_random_sources {
        return Err(EnvError::ArrivalCount {
            expected: cfg.num_random_sources,
            got: arrivals.len(),
        });
    }
    let mut next = state.clone();
    for (k, src) in next.sources.iter_mut().enumerate() {
        if cfg.is_gaw(k) {
            src.fresh_age = 0;
        } else if arrivals[k] {
            src.fresh_age = 0;
        } else {
            src.fresh_age = capped_inc(src.fresh_age, cfg.aoi_cap);
        }
    }
    Ok(next)
}

/// Applies the attempt-count, under-process-age and receiver-AoI recursions
/// for one slot, leaving `fresh_age` untouched (that part is advanced by
/// [`apply_arrivals`], which models the next slot's arrivals).
pub fn advance_post_action(
    state: &SystemState,
    action: Action,
    decoded: bool,
    cfg: &SystemConfig,
) -> Result<SystemState, EnvError> {
    if !action_is_feasible(state, action, cfg) {
        return Err(EnvError::InfeasibleAction {
            action: action.to_string(),
        });
    }
    let cap = cfg.aoi_cap;
    let mut next = state.clone();
    for (k, src) in next.sources.iter_mut().enumerate() {
        let fresh_tilde = capped_inc(src.fresh_age, cap);
        let proc_tilde = capped_inc(src.proc_age, cap);
        let aoi_tilde = capped_inc(src.aoi, cap);
        match action {
            Action::TransmitFresh(j) if j == k => {
                src.attempts = 1;
                src.proc_age = fresh_tilde;
                src.aoi = if decoded { fresh_tilde } else { aoi_tilde };
            }
            Action::Retransmit(j) if j == k => {
                src.attempts += 1;
                src.proc_age = proc_tilde;
                src.aoi = if decoded { proc_tilde } else { aoi_tilde };
            }
            _ => {
                src.proc_age = proc_tilde;
                src.aoi = aoi_tilde;
            }
        }
    }
    Ok(next)
}

/// Full deterministic one-slot update given the decode outcome and the next
/// slot's arrival flags.
pub fn advance_ages(
    state: &SystemState,
    action: Action,
    decoded: bool,
    arrivals: &[bool],
    cfg: &SystemConfig,
) -> Result<SystemState, EnvError> {
    let next = advance_post_action(state, action, decoded, cfg)?;
    apply_arrivals(&next, arrivals, cfg)
}

/// Samples one slot: the decode outcome (first transmissions use `f(1)`,
/// retransmissions `f(x+1)`, idle slots never decode) and one arrival flag
/// per random-arrival source.
pub fn step(
    state: &SystemState,
    action: Action,
    rng: &mut impl Rng,
    cfg: &SystemConfig,
) -> Result<StepOutcome, EnvError> {
    if !action_is_feasible(state, action, cfg) {
        return Err(EnvError::InfeasibleAction {
            action: action.to_string(),
        });
    }
    let decoded = match action {
        Action::Idle => false,
        Action::TransmitFresh(_) => rng.gen_bool(decode_probability(1, cfg)?),
        Action::Retransmit(k) => {
            let attempts = u32::from(state.sources[k].attempts) + 1;
            rng.gen_bool(decode_probability(attempts, cfg)?)
        }
    };
    let arrivals: Vec<bool> = (0..cfg.num_random_sources)
        .map(|k| rng.gen_bool(cfg.arrival_probs[k]))
        .collect();
    let next_state = advance_ages(state, action, decoded, &arrivals, cfg)?;
    let aoi_cost = next_state.avg_aoi();
    Ok(StepOutcome {
        next_state,
        decoded,
        arrivals,
        cost: if action.is_transmit() { 1.0 } else { 0.0 },
        aoi_cost,
    })
}

/// Average AoI over all sources.
pub fn avg_aoi(state: &SystemState) -> f64 {
    let sum: u64 = state.sources.iter().map(|s| u64::from(s.aoi)).sum();
    sum as f64 / state.sources.len() as f64
}

/// What one slot does to a single source, from that source's point of view.
#[derive(Clone, Copy, PartialEq, Eq)]
enum SourceAction {
    Fresh,
    Retx,
    None,
}

/// Per-source successor distribution. Written directly from the one-slot
/// transition probabilities (not by composing [`advance_ages`]) so that the
/// sampled and enumerated dynamics cross-check each other.
fn source_branches(
    src: &SourceState,
    action: SourceAction,
    lambda: f64,
    cfg: &SystemConfig,
) -> Result<Vec<(SourceState, f64)>, EnvError> {
    let cap = cfg.aoi_cap;
    let fresh_tilde = capped_inc(src.fresh_age, cap);
    let proc_tilde = capped_inc(src.proc_age, cap);
    let aoi_tilde = capped_inc(src.aoi, cap);
    let mut out = Vec::with_capacity(4);
    let mut push = |state: SourceState, p: f64| {
        if p > 0.0 {
            out.push((state, p));
        }
    };
    match action {
        SourceAction::Fresh | SourceAction::Retx => {
            let (f, proc_next, attempts_next) = match action {
                SourceAction::Fresh => (decode_probability(1, cfg)?, fresh_tilde, 1),
                SourceAction::Retx => {
                    let attempts = u32::from(src.attempts) + 1;
                    (decode_probability(attempts, cfg)?, proc_tilde, src.attempts + 1)
                }
                SourceAction::None => unreachable!(),
            };
            for (decoded, pd) in [(true, f), (false, 1.0 - f)] {
                let aoi_next = if decoded { proc_next } else { aoi_tilde };
                for (arrived, pb) in [(true, lambda), (false, 1.0 - lambda)] {
                    let fresh_next = if arrived { 0 } else { fresh_tilde };
                    push(
                        SourceState::new(fresh_next, proc_next, aoi_next, attempts_next),
                        pd * pb,
                    );
                }
            }
        }
        SourceAction::None => {
            for (arrived, pb) in [(true, lambda), (false, 1.0 - lambda)] {
                let fresh_next = if arrived { 0 } else { fresh_tilde };
                push(
                    SourceState::new(fresh_next, proc_tilde, aoi_tilde, src.attempts),
                    pb,
                );
            }
        }
    }
    Ok(out)
}

/// Enumerates every next state with nonzero probability under `action`.
///
/// The kernel factorizes over sources; generate-at-will sources use the
/// `lambda = 1` substitution. Successors are merged (branches can coincide
/// once ages hit the cap) and returned in a deterministic order; the
/// probabilities sum to 1.
pub fn transition_kernel(
    state: &SystemState,
    action: Action,
    cfg: &SystemConfig,
) -> Result<Vec<(SystemState, f64)>, EnvError> {
    if !action_is_feasible(state, action, cfg) {
        return Err(EnvError::InfeasibleAction {
            action: action.to_string(),
        });
    }
    let mut per_source = Vec::with_capacity(state.num_sources());
    for (k, src) in state.sources.iter().enumerate() {
        let src_action = match action {
            Action::TransmitFresh(j) if j == k => SourceAction::Fresh,
            Action::Retransmit(j) if j == k => SourceAction::Retx,
            _ => SourceAction::None,
        };
        per_source.push(source_branches(src, src_action, cfg.arrival_prob(k), cfg)?);
    }

    // Cartesian product over the per-source branches.
    let mut partial: Vec<(Vec<SourceState>, f64)> = vec![(Vec::new(), 1.0)];
    for branches in &per_source {
        let mut grown = Vec::with_capacity(partial.len() * branches.len());
        for (prefix, p) in &partial {
            for (src_next, q) in branches {
                let mut sources = prefix.clone();
                sources.push(*src_next);
                grown.push((sources, p * q));
            }
        }
        partial = grown;
    }

    let mut merged = std::collections::BTreeMap::new();
    for (sources, p) in partial {
        *merged.entry(SystemState { sources }).or_insert(0.0) += p;
    }
    Ok(merged.into_iter().collect())
}
