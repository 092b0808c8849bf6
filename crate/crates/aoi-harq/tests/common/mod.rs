//! Shared test oracles, independent of the library's solver internals.
//!
//! The exact-gain evaluator here decomposes the policy-induced chain into
//! strongly connected components, solves each recurrent class for its
//! stationary distribution, and weighs class gains by absorption
//! probabilities from the start state. The library's own evaluator uses a
//! single global balance solve (or damped power iteration), so agreement is
//! a genuine two-route check.

use nalgebra::{DMatrix, DVector};

use aoi_harq::cmdp::{KernelTable, StateSpace};
use aoi_harq::env::Action;
use aoi_harq::SystemConfig;

/// Long-run average cost from `start` under a fixed policy.
///
/// `arcs[s]` are the successor arcs of state `s` under the policy's action;
/// `costs[s]` is the per-slot cost incurred in `s`.
pub fn exact_gain_from_start(arcs: &[&[(usize, f64)]], costs: &[f64], start: usize) -> f64 {
    // Restrict to states reachable from `start`.
    let n_full = arcs.len();
    let mut sub_of = vec![usize::MAX; n_full];
    let mut full_of = vec![start];
    sub_of[start] = 0;
    let mut cursor = 0;
    while cursor < full_of.len() {
        let s = full_of[cursor];
        cursor += 1;
        for &(t, p) in arcs[s] {
            if p > 0.0 && sub_of[t] == usize::MAX {
                sub_of[t] = full_of.len();
                full_of.push(t);
            }
        }
    }
    let n = full_of.len();
    let sub_arcs: Vec<Vec<(usize, f64)>> = full_of
        .iter()
        .map(|&s| {
            arcs[s]
                .iter()
                .filter(|&&(_, p)| p > 0.0)
                .map(|&(t, p)| (sub_of[t], p))
                .collect()
        })
        .collect();

    let comp_of = tarjan_scc(&sub_arcs);
    let num_comps = comp_of.iter().max().unwrap() + 1;

    // A component is recurrent when no arc leaves it.
    let mut recurrent = vec![true; num_comps];
    for (s, arcs) in sub_arcs.iter().enumerate() {
        for &(t, _) in arcs {
            if comp_of[t] != comp_of[s] {
                recurrent[comp_of[s]] = false;
            }
        }
    }

    // Gain of each recurrent class via its stationary distribution.
    let mut class_gain = vec![0.0; num_comps];
    for c in 0..num_comps {
        if !recurrent[c] {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&s| comp_of[s] == c).collect();
        let local: Vec<usize> = {
            let mut map = vec![usize::MAX; n];
            for (i, &s) in members.iter().enumerate() {
                map[s] = i;
            }
            map
        };
        let m = members.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (i, &s) in members.iter().enumerate() {
            for &(t, p) in &sub_arcs[s] {
                a[(local[t], i)] += p;
            }
            a[(i, i)] -= 1.0;
        }
        for j in 0..m {
            a[(0, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(m);
        b[0] = 1.0;
        let pi = a.lu().solve(&b).expect("recurrent class is unichain");
        class_gain[c] = members
            .iter()
            .enumerate()
            .map(|(i, &s)| pi[i].max(0.0) * costs[full_of[s]])
            .sum();
    }

    if recurrent[comp_of[0]] {
        return class_gain[comp_of[0]];
    }

    // Absorption probabilities from the transient part into each class.
    let transients: Vec<usize> = (0..n).filter(|&s| !recurrent[comp_of[s]]).collect();
    let t_index = {
        let mut map = vec![usize::MAX; n];
        for (i, &s) in transients.iter().enumerate() {
            map[s] = i;
        }
        map
    };
    let nt = transients.len();
    let recurrent_comps: Vec<usize> = (0..num_comps).filter(|&c| recurrent[c]).collect();
    let mut i_minus_q = DMatrix::<f64>::identity(nt, nt);
    let mut rhs = DMatrix::<f64>::zeros(nt, recurrent_comps.len());
    for (i, &s) in transients.iter().enumerate() {
        for &(t, p) in &sub_arcs[s] {
            if recurrent[comp_of[t]] {
                let col = recurrent_comps.iter().position(|&c| c == comp_of[t]).unwrap();
                rhs[(i, col)] += p;
            } else {
                i_minus_q[(i, t_index[t])] -= p;
            }
        }
    }
    let absorb = i_minus_q
        .lu()
        .solve(&rhs)
        .expect("transient system is nonsingular");
    recurrent_comps
        .iter()
        .enumerate()
        .map(|(col, &c)| absorb[(t_index[0], col)] * class_gain[c])
        .sum()
}

/// Iterative Tarjan strongly-connected components; returns a component id
/// per node (ids are otherwise arbitrary).
fn tarjan_scc(arcs: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = arcs.len();
    let mut index = vec![usize::MAX; n];
    let mut lowlink = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp_of = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;

    // Explicit DFS stack of (node, next arc position).
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut dfs: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&(v, pos)) = dfs.last() {
            if pos == 0 {
                index[v] = next_index;
                lowlink[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if pos < arcs[v].len() {
                dfs.last_mut().unwrap().1 += 1;
                let (w, _) = arcs[v][pos];
                if index[w] == usize::MAX {
                    dfs.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
            } else {
                if lowlink[v] == index[v] {
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp_of[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
                dfs.pop();
                if let Some(&(parent, _)) = dfs.last() {
                    lowlink[parent] = lowlink[parent].min(lowlink[v]);
                }
            }
        }
    }
    comp_of
}

/// Per-state arc and cost tables for one instance, shared by the brute-force
/// policy enumeration.
pub struct PolicyEnumeration {
    /// Per state, per feasible action: `(action, arcs)`.
    pub choices: Vec<Vec<(Action, Vec<(usize, f64)>)>>,
    /// Per state: average AoI (the `d` cost).
    pub aoi_cost: Vec<f64>,
}

impl PolicyEnumeration {
    pub fn build(space: &StateSpace, table: &KernelTable, _cfg: &SystemConfig) -> Self {
        let choices = (0..space.len())
            .map(|s| {
                table
                    .actions_of(s)
                    .map(|(action, targets, probs)| {
                        let arcs = targets
                            .iter()
                            .zip(probs)
                            .map(|(&t, &p)| (t as usize, p))
                            .collect();
                        (action, arcs)
                    })
                    .collect()
            })
            .collect();
        let aoi_cost = space.states().iter().map(|s| s.avg_aoi()).collect();
        Self { choices, aoi_cost }
    }

    /// Number of deterministic policies.
    pub fn policy_count(&self) -> u128 {
        self.choices
            .iter()
            .map(|c| c.len() as u128)
            .product()
    }

    /// Minimum long-run average of `tx_weight * c(a) + beta * d(s)` over all
    /// deterministic policies, evaluated exactly from the initial state.
    pub fn brute_force_min_gain(&self, tx_weight: f64, beta: f64) -> f64 {
        let n = self.choices.len();
        let mut selector = vec![0usize; n];
        let mut best = f64::INFINITY;
        let mut arcs: Vec<&[(usize, f64)]> = Vec::with_capacity(n);
        let mut costs = vec![0.0; n];
        loop {
            arcs.clear();
            for (s, &choice) in selector.iter().enumerate() {
                let (action, action_arcs) = &self.choices[s][choice];
                arcs.push(action_arcs.as_slice());
                let c = if action.is_transmit() { tx_weight } else { 0.0 };
                costs[s] = c + beta * self.aoi_cost[s];
            }
            let gain = exact_gain_from_start(&arcs, &costs, 0);
            if gain < best {
                best = gain;
            }
            // Mixed-radix odometer over the per-state action choices.
            let mut s = 0;
            loop {
                if s == n {
                    return best;
                }
                selector[s] += 1;
                if selector[s] < self.choices[s].len() {
                    break;
                }
                selector[s] = 0;
                s += 1;
            }
        }
    }
}
