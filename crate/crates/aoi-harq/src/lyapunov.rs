//! Low-complexity dynamic transmission (LC-DT) policy.
//!
//! The average-AoI constraint is absorbed into a virtual queue
//! `Q_{t+1} = max(Q_t - aoi_limit + avg_aoi_{t+1}, 0)`; strong stability of
//! the queue implies the constraint holds. Each slot the controller
//! minimizes a per-slot upper bound `W_t` of the drift-plus-penalty
//! expression
//!
//! ```text
//! V * tau_t + (Delta_max^2 + E[avg_aoi'^2] + 2 Q_t (E[avg_aoi'] - Delta_max)) / 2
//! ```
//!
//! over the at most `2K + 1` feasible actions. The conditional expectations
//! have closed forms in the current ages and decode probabilities
//! ([`expected_next_aoi`], [`expected_next_aoi_sq`]); [`dpp_objective`]
//! evaluates the expanded bound directly with the action's 0/1 indicators.

use rand::Rng;

use crate::config::SystemConfig;
use crate::env::{self, Action, SystemState};

/// System state augmented with the virtual queue backlog.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub system: SystemState,
    /// Virtual queue backlog, non-negative by construction.
    pub queue: f64,
}

impl NetworkState {
    pub fn initial(cfg: &SystemConfig) -> Self {
        Self {
            system: SystemState::initial(cfg),
            queue: 0.0,
        }
    }
}

/// Queue recursion `max(queue - aoi_limit + next_avg_aoi, 0)`.
pub fn virtual_queue_update(queue: f64, next_avg_aoi: f64, aoi_limit: f64) -> f64 {
    (queue - aoi_limit + next_avg_aoi).max(0.0)
}

/// Per-source quantities entering the closed forms: the incremented-and-
/// capped ages and the action indicators already multiplied by their decode
/// probabilities.
struct SourceTerms {
    /// `u_k * f(1)`
    uf: f64,
    /// `r_k * f(x_k + 1)`
    rf: f64,
    fresh_tilde: f64,
    proc_tilde: f64,
    aoi_tilde: f64,
}

fn source_terms(state: &SystemState, action: Action, cfg: &SystemConfig) -> Vec<SourceTerms> {
    let cap = cfg.aoi_cap;
    let tilde = |age: u16| f64::from(age.saturating_add(1).min(cap));
    state
        .sources
        .iter()
        .enumerate()
        .map(|(k, src)| {
            let (uf, rf) = match action {
                Action::TransmitFresh(j) if j == k => {
                    (env::decode_probability(1, cfg).expect("1 <= max_attempts"), 0.0)
                }
                Action::Retransmit(j) if j == k => {
                    let attempts = u32::from(src.attempts) + 1;
                    (0.0, env::decode_probability(attempts, cfg).expect("feasible retransmit"))
                }
                _ => (0.0, 0.0),
            };
            SourceTerms {
                uf,
                rf,
                fresh_tilde: tilde(src.fresh_age),
                proc_tilde: tilde(src.proc_age),
                aoi_tilde: tilde(src.aoi),
            }
        })
        .collect()
}

/// Conditional expectation of the next slot's average AoI given the current
/// ages and a deterministic action.
pub fn expected_next_aoi(state: &SystemState, action: Action, cfg: &SystemConfig) -> f64 {
    let terms = source_terms(state, action, cfg);
    let k = terms.len() as f64;
    terms
        .iter()
        .map(|t| t.uf * t.fresh_tilde + t.rf * t.proc_tilde + (1.0 - t.uf - t.rf) * t.aoi_tilde)
        .sum::<f64>()
        / k
}

/// Conditional expectation of the squared next average AoI, including the
/// cross terms over source pairs.
pub fn expected_next_aoi_sq(state: &SystemState, action: Action, cfg: &SystemConfig) -> f64 {
    let terms = source_terms(state, action, cfg);
    let k = terms.len();
    let mut total = 0.0;
    for t in &terms {
        total += t.uf * t.fresh_tilde * t.fresh_tilde
            + t.rf * t.proc_tilde * t.proc_tilde
            + (1.0 - t.uf - t.rf) * t.aoi_tilde * t.aoi_tilde;
    }
    for (i, a) in terms.iter().enumerate() {
        for (j, b) in terms.iter().enumerate() {
            if i == j {
                continue;
            }
            total += cross_moment(a, b);
        }
    }
    total / (k * k) as f64
}

/// `E[aoi'_k * aoi'_k']` for one ordered source pair; both sources'
/// decode events enter (at most one of them can actually transmit).
fn cross_moment(a: &SourceTerms, b: &SourceTerms) -> f64 {
    a.uf * a.fresh_tilde * b.aoi_tilde
        + a.rf * a.proc_tilde * b.aoi_tilde
        + b.uf * b.fresh_tilde * a.aoi_tilde
        + b.rf * b.proc_tilde * a.aoi_tilde
        - a.uf * a.aoi_tilde * b.aoi_tilde
        - a.rf * a.aoi_tilde * b.aoi_tilde
        - b.uf * b.aoi_tilde * a.aoi_tilde
        - b.rf * b.aoi_tilde * a.aoi_tilde
        + a.aoi_tilde * b.aoi_tilde
}

/// The drift-plus-penalty bound `W_t`, evaluated in its expanded form with
/// the action's deterministic indicators.
pub fn dpp_objective(o: &NetworkState, action: Action, cfg: &SystemConfig) -> f64 {
    let terms = source_terms(&o.system, action, cfg);
    let k = terms.len();
    let kf = k as f64;
    let v = cfg.dpp_weight;
    let limit = cfg.aoi_limit;
    let tau = if action.is_transmit() { 1.0 } else { 0.0 };

    let mut bracket = 0.0;
    for t in &terms {
        bracket += t.uf * t.fresh_tilde * t.fresh_tilde
            + t.rf * t.proc_tilde * t.proc_tilde
            + (1.0 - t.uf - t.rf) * t.aoi_tilde * t.aoi_tilde;
    }
    for (i, a) in terms.iter().enumerate() {
        for (j, b) in terms.iter().enumerate() {
            if i == j {
                continue;
            }
            bracket += cross_moment(a, b);
        }
    }
    let queue_sum: f64 = terms
        .iter()
        .map(|t| t.uf * t.fresh_tilde + t.rf * t.proc_tilde + (1.0 - t.uf - t.rf) * t.aoi_tilde)
        .sum();
    bracket += 2.0 * kf * o.queue * queue_sum;

    v * tau + bracket / (2.0 * kf * kf) + 0.5 * (limit * limit - 2.0 * o.queue * limit)
}

/// Argmin of [`dpp_objective`] over the feasible actions, ties broken by the
/// fixed action order.
pub fn select_action(o: &NetworkState, cfg: &SystemConfig) -> Action {
    select_action_counted(o, cfg).0
}

/// Like [`select_action`], also reporting how many candidates were
/// evaluated (at most `2K + 1`).
pub fn select_action_counted(o: &NetworkState, cfg: &SystemConfig) -> (Action, usize) {
    let mut best = f64::INFINITY;
    let mut best_action = Action::Idle;
    let mut evaluated = 0;
    for action in env::feasible_actions(&o.system, cfg) {
        evaluated += 1;
        let w = dpp_objective(o, action, cfg);
        if w < best {
            best = w;
            best_action = action;
        }
    }
    (best_action, evaluated)
}

/// One recorded slot of a controller run. `avg_aoi` is the average AoI of
/// the decision state; `queue` is the backlog after the slot's update.
#[derive(Debug, Clone, Copy)]
pub struct SlotRecord {
    pub slot: usize,
    pub action_code: usize,
    pub decoded: bool,
    pub avg_aoi: f64,
    pub running_tau_bar: f64,
    pub running_delta_bar: f64,
    pub queue: f64,
}

pub const SLOT_CSV_HEADER: &str = "slot,action_code,decoded,avg_aoi,running_tau_bar,running_delta_bar,Q";

pub fn slot_record_csv_line(r: &SlotRecord) -> String {
    format!(
        "{},{},{},{:.6},{:.6},{:.6},{:.6}",
        r.slot, r.action_code, u8::from(r.decoded), r.avg_aoi, r.running_tau_bar, r.running_delta_bar, r.queue
    )
}

/// Trajectory of one LC-DT run.
#[derive(Debug, Clone)]
pub struct LcdtRun {
    pub records: Vec<SlotRecord>,
}

impl LcdtRun {
    /// Final running averages `(tau_bar, delta_bar)`.
    pub fn final_averages(&self) -> (f64, f64) {
        let last = self.records.last().expect("horizon >= 1");
        (last.running_tau_bar, last.running_delta_bar)
    }

    /// Averages over the slots after dropping the first `burn_in` fraction.
    pub fn averages_after_burn_in(&self, burn_in: f64) -> (f64, f64) {
        let skip = (self.records.len() as f64 * burn_in) as usize;
        let kept = &self.records[skip..];
        let n = kept.len() as f64;
        let tau: f64 = kept.iter().map(|r| ((r.action_code != 0) as u8) as f64).sum();
        let delta: f64 = kept.iter().map(|r| r.avg_aoi).sum();
        (tau / n, delta / n)
    }

    pub fn mean_queue(&self) -> f64 {
        self.records.iter().map(|r| r.queue).sum::<f64>() / self.records.len() as f64
    }
}

/// Runs the LC-DT controller for `horizon` slots. Per slot: pick the
/// `W_t`-minimizing action on the current post-arrival state (the all-zero
/// start holds a fresh packet of age zero), then apply the attempt, age and
/// queue recursions with the sampled decode outcome and the next slot's
/// arrivals — so every decision observes its own slot's arrivals.
pub fn run_lcdt(cfg: &SystemConfig, horizon: usize, rng: &mut impl Rng) -> LcdtRun {
    let num_sources = cfg.num_sources();
    let mut o = NetworkState::initial(cfg);
    let mut records = Vec::with_capacity(horizon);
    let mut tau_sum = 0.0;
    let mut delta_sum = 0.0;
    for slot in 1..=horizon {
        let action = select_action(&o, cfg);
        let decision_aoi = o.system.avg_aoi();
        let outcome = env::step(&o.system, action, rng, cfg).expect("selected action is feasible");
        o.system = outcome.next_state;
        o.queue = virtual_queue_update(o.queue, outcome.aoi_cost, cfg.aoi_limit);

        tau_sum += outcome.cost;
        delta_sum += decision_aoi;
        records.push(SlotRecord {
            slot,
            action_code: action.code(num_sources),
            decoded: outcome.decoded,
            avg_aoi: decision_aoi,
            running_tau_bar: tau_sum / slot as f64,
            running_delta_bar: delta_sum / slot as f64,
            queue: o.queue,
        });
    }
    LcdtRun { records }
}
