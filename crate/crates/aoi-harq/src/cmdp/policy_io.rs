//! Versioned on-disk format for solved policy tables.
//!
//! Text file: a header of `key = value` metadata lines, a `table:` marker,
//! then one `state_index action_code` pair per line. Action codes are 0 for
//! idle, `1 + k` for a fresh transmission from source `k` (0-based), and
//! `1 + K + k` for a retransmission. State indices refer to the
//! breadth-first enumeration order of the reachable state space, which is
//! deterministic for a given configuration; the header carries the config
//! hash so a table cannot be replayed against a different instance.

use std::path::Path;

use crate::config::SystemConfig;
use crate::env::Action;
use crate::error::SimError;

use super::bisect::{DeterministicPolicy, PolicyKind};
use super::evaluate::EvalMethod;

const MAGIC: &str = "aoi-harq-policy v1";

/// A policy table as read back from disk.
#[derive(Debug, Clone)]
pub struct PolicyFile {
    pub policy: DeterministicPolicy,
    pub config_hash: u64,
    pub kind: PolicyKind,
}

pub fn save_policy(
    path: impl AsRef<Path>,
    policy: &DeterministicPolicy,
    kind: PolicyKind,
    cfg: &SystemConfig,
) -> Result<(), SimError> {
    let num_sources = cfg.num_sources();
    let mut text = String::with_capacity(32 * policy.actions.len() / 4);
    text.push_str(MAGIC);
    text.push('\n');
    text.push_str(&format!("config_hash = {:#018x}\n", cfg.hash()));
    text.push_str(&format!("kind = {kind}\n"));
    text.push_str(&format!("beta = {}\n", policy.beta));
    text.push_str(&format!("tau_bar = {}\n", policy.tau_bar));
    text.push_str(&format!("delta_bar = {}\n", policy.delta_bar));
    text.push_str(&format!("eval_method = {}\n", policy.eval_method));
    text.push_str(&format!("states = {}\n", policy.actions.len()));
    text.push_str("table:\n");
    for (index, action) in policy.actions.iter().enumerate() {
        text.push_str(&format!("{index} {}\n", action.code(num_sources)));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<Path>, cfg: &SystemConfig) -> Result<PolicyFile, SimError> {
    let path = path.as_ref();
    let fail = |reason: String| SimError::PolicyFile {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(fail(format!("missing `{MAGIC}` header")));
    }

    let mut config_hash = None;
    let mut kind = None;
    let mut beta = None;
    let mut tau_bar = None;
    let mut delta_bar = None;
    let mut eval_method = None;
    let mut states = None;
    for line in lines.by_ref() {
        if line == "table:" {
            break;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(fail(format!("bad header line `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "config_hash" => {
                let digits = value.trim_start_matches("0x");
                config_hash =
                    Some(u64::from_str_radix(digits, 16).map_err(|e| fail(e.to_string()))?);
            }
            "kind" => {
                kind = Some(match value {
                    "feasible" => PolicyKind::Feasible,
                    "lower_bound" => PolicyKind::LowerBound,
                    other => return Err(fail(format!("unknown kind `{other}`"))),
                });
            }
            "beta" => beta = Some(value.parse().map_err(|_| fail(format!("bad beta `{value}`")))?),
            "tau_bar" => {
                tau_bar = Some(value.parse().map_err(|_| fail(format!("bad tau_bar `{value}`")))?)
            }
            "delta_bar" => {
                delta_bar =
                    Some(value.parse().map_err(|_| fail(format!("bad delta_bar `{value}`")))?)
            }
            "eval_method" => {
                eval_method = Some(match value {
                    "exact" => EvalMethod::Exact,
                    "monte_carlo" => EvalMethod::MonteCarlo,
                    other => return Err(fail(format!("unknown eval_method `{other}`"))),
                });
            }
            "states" => {
                states = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| fail(format!("bad states `{value}`")))?,
                )
            }
            other => return Err(fail(format!("unknown header key `{other}`"))),
        }
    }

    let states = states.ok_or_else(|| fail("missing states".into()))?;
    let config_hash = config_hash.ok_or_else(|| fail("missing config_hash".into()))?;
    if config_hash != cfg.hash() {
        return Err(SimError::ConfigMismatch {
            policy_hash: config_hash,
            config_hash: cfg.hash(),
        });
    }

    let num_sources = cfg.num_sources();
    let mut actions = vec![Action::Idle; states];
    let mut seen = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(index), Some(code)) = (parts.next(), parts.next()) else {
            return Err(fail(format!("bad table line `{line}`")));
        };
        let index: usize = index.parse().map_err(|_| fail(format!("bad index `{index}`")))?;
        let code: usize = code.parse().map_err(|_| fail(format!("bad code `{code}`")))?;
        if index >= states {
            return Err(fail(format!("index {index} out of range ({states} states)")));
        }
        actions[index] = Action::from_code(code, num_sources)
            .ok_or_else(|| fail(format!("invalid action code {code} for K = {num_sources}")))?;
        seen += 1;
    }
    if seen != states {
        return Err(fail(format!("table has {seen} rows, header says {states}")));
    }

    Ok(PolicyFile {
        policy: DeterministicPolicy {
            actions,
            beta: beta.ok_or_else(|| fail("missing beta".into()))?,
            tau_bar: tau_bar.ok_or_else(|| fail("missing tau_bar".into()))?,
            delta_bar: delta_bar.ok_or_else(|| fail("missing delta_bar".into()))?,
            eval_method: eval_method.ok_or_else(|| fail("missing eval_method".into()))?,
        },
        config_hash,
        kind: kind.ok_or_else(|| fail("missing kind".into()))?,
    })
}
