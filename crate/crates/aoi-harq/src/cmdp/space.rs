//! Reachable state enumeration and the flattened transition table.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::env::{self, Action, SystemState};
use crate::error::SolveError;

pub const DEFAULT_STATE_CAP: usize = 5_000_000;

/// The reachable state set, densely indexed. Index 0 is the all-zero initial
/// state, which doubles as the reference state of the relative value
/// iteration.
#[derive(Debug, Clone)]
pub struct StateSpace {
    states: Vec<SystemState>,
    index: HashMap<SystemState, u32>,
    pub reference_state: usize,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, index: usize) -> &SystemState {
        &self.states[index]
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn index_of(&self, state: &SystemState) -> Option<usize> {
        self.index.get(state).map(|&i| i as usize)
    }
}

/// Breadth-first closure of the all-zero state under every feasible action
/// and every successor of nonzero probability.
pub fn enumerate_states(cfg: &SystemConfig) -> Result<StateSpace, SolveError> {
    enumerate_states_capped(cfg, DEFAULT_STATE_CAP)
}

pub fn enumerate_states_capped(cfg: &SystemConfig, cap: usize) -> Result<StateSpace, SolveError> {
    let initial = SystemState::initial(cfg);
    let mut states = vec![initial.clone()];
    let mut index = HashMap::new();
    index.insert(initial, 0u32);

    // Level-synchronized BFS: successor sets of one frontier are computed in
    // parallel, then indices are assigned in frontier order so the numbering
    // is independent of the thread schedule.
    let mut frontier = vec![0usize];
    while !frontier.is_empty() {
        let expansions: Vec<Vec<SystemState>> = frontier
            .par_iter()
            .map(|&i| {
                let state = &states[i];
                let mut successors = Vec::new();
                for action in env::feasible_actions(state, cfg) {
                    let kernel = env::transition_kernel(state, action, cfg)
                        .expect("enumerated action must be feasible");
                    for (next, _) in kernel {
                        successors.push(next);
                    }
                }
                successors
            })
            .collect();
        let mut next_frontier = Vec::new();
        for successors in expansions {
            for next in successors {
                if !index.contains_key(&next) {
                    let id = states.len() as u32;
                    if states.len() >= cap {
                        return Err(SolveError::StateCapExceeded { cap });
                    }
                    index.insert(next.clone(), id);
                    states.push(next);
                    next_frontier.push(id as usize);
                }
            }
        }
        frontier = next_frontier;
    }

    Ok(StateSpace {
        states,
        index,
        reference_state: 0,
    })
}

/// Transition kernel of the whole space in flat compressed form: per state a
/// run of feasible action codes, per action a run of `(successor index,
/// probability)` arcs.
#[derive(Debug, Clone)]
pub struct KernelTable {
    action_offsets: Vec<u32>,
    action_codes: Vec<u8>,
    arc_offsets: Vec<u32>,
    arc_targets: Vec<u32>,
    arc_probs: Vec<f64>,
    num_sources: usize,
}

impl KernelTable {
    pub fn build(space: &StateSpace, cfg: &SystemConfig) -> Self {
        let num_sources = cfg.num_sources();
        let per_state: Vec<Vec<(u8, Vec<(u32, f64)>)>> = space
            .states
            .par_iter()
            .map(|state| {
                env::feasible_actions(state, cfg)
                    .into_iter()
                    .map(|action| {
                        let arcs = env::transition_kernel(state, action, cfg)
                            .expect("feasible action")
                            .into_iter()
                            .map(|(next, p)| {
                                let target = space
                                    .index_of(&next)
                                    .expect("state space closed under the kernel")
                                    as u32;
                                (target, p)
                            })
                            .collect();
                        (action.code(num_sources) as u8, arcs)
                    })
                    .collect()
            })
            .collect();

        let total_actions: usize = per_state.iter().map(|a| a.len()).sum();
        let total_arcs: usize = per_state
            .iter()
            .flat_map(|a| a.iter().map(|(_, arcs)| arcs.len()))
            .sum();
        let mut table = KernelTable {
            action_offsets: Vec::with_capacity(space.len() + 1),
            action_codes: Vec::with_capacity(total_actions),
            arc_offsets: Vec::with_capacity(total_actions + 1),
            arc_targets: Vec::with_capacity(total_arcs),
            arc_probs: Vec::with_capacity(total_arcs),
            num_sources,
        };
        table.action_offsets.push(0);
        table.arc_offsets.push(0);
        for actions in per_state {
            for (code, arcs) in actions {
                table.action_codes.push(code);
                for (target, p) in arcs {
                    table.arc_targets.push(target);
                    table.arc_probs.push(p);
                }
                table.arc_offsets.push(table.arc_targets.len() as u32);
            }
            table.action_offsets.push(table.action_codes.len() as u32);
        }
        table
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    /// Feasible actions of a state with their successor arcs.
    pub fn actions_of(&self, state: usize) -> impl Iterator<Item = (Action, &[u32], &[f64])> {
        let lo = self.action_offsets[state] as usize;
        let hi = self.action_offsets[state + 1] as usize;
        (lo..hi).map(move |entry| {
            let code = self.action_codes[entry] as usize;
            let action = Action::from_code(code, self.num_sources).expect("stored code is valid");
            let a = self.arc_offsets[entry] as usize;
            let b = self.arc_offsets[entry + 1] as usize;
            (action, &self.arc_targets[a..b], &self.arc_probs[a..b])
        })
    }

    /// Successor arcs of one `(state, action)` pair, if the action is
    /// feasible there.
    pub fn arcs_of(&self, state: usize, action: Action) -> Option<(&[u32], &[f64])> {
        self.actions_of(state)
            .find(|(a, _, _)| *a == action)
            .map(|(_, t, p)| (t, p))
    }
}
