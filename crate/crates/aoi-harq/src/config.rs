//! Model parameters and the flat `key = value` config format.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::ConfigError;

/// All model and solver parameters of one problem instance.
///
/// Sources are ordered with the `num_random_sources` random-arrival sources
/// first (indices `0..I`), followed by the `num_gaw_sources` generate-at-will
/// sources (indices `I..K`). That layout is fixed so state encodings are
/// reproducible across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of random-arrival sources (`I`).
    pub num_random_sources: usize,
    /// Number of generate-at-will sources (`J`).
    pub num_gaw_sources: usize,
    /// Packet arrival probability per random-arrival source, each in (0, 1].
    pub arrival_probs: Vec<f64>,
    /// Error probability of the first transmission of a packet (`p0`).
    pub first_error_prob: f64,
    /// HARQ combining effectiveness (`eta`); 0 means the second attempt
    /// always decodes, 1 means retransmissions do not help.
    pub harq_gain: f64,
    /// Maximum transmission attempts per packet (`x_max`).
    pub max_attempts: u8,
    /// Hard cap applied to every age value (`delta_max`), in slots.
    pub aoi_cap: u16,
    /// Constraint on the long-run average AoI (`Delta_max`), in slots.
    pub aoi_limit: f64,
    /// Drift-plus-penalty trade-off weight (`V`).
    pub dpp_weight: f64,
    /// Seed for stochastic components.
    pub rng_seed: u64,
}

pub const CONFIG_KEYS: &[&str] = &[
    "num_random_sources",
    "num_gaw_sources",
    "arrival_probs",
    "first_error_prob",
    "harq_gain",
    "max_attempts",
    "aoi_cap",
    "aoi_limit",
    "dpp_weight",
    "rng_seed",
];

impl SystemConfig {
    /// Total number of sources `K = I + J`.
    pub fn num_sources(&self) -> usize {
        self.num_random_sources + self.num_gaw_sources
    }

    /// Whether source `k` (0-based) is generate-at-will.
    pub fn is_gaw(&self, k: usize) -> bool {
        k >= self.num_random_sources
    }

    /// Arrival probability of source `k`; generate-at-will sources sample on
    /// command, which is the `lambda = 1` substitution.
    pub fn arrival_prob(&self, k: usize) -> f64 {
        if self.is_gaw(k) {
            1.0
        } else {
            self.arrival_probs[k]
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.num_sources() < 1 {
            return fail("need at least one source (num_random_sources + num_gaw_sources >= 1)".into());
        }
        if self.arrival_probs.len() != self.num_random_sources {
            return fail(format!(
                "arrival_probs has {} entries but num_random_sources = {}",
                self.arrival_probs.len(),
                self.num_random_sources
            ));
        }
        for (k, &p) in self.arrival_probs.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("arrival_probs[{k}] = {p} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.first_error_prob) {
            return fail(format!("first_error_prob = {} outside [0, 1]", self.first_error_prob));
        }
        if !(0.0..=1.0).contains(&self.harq_gain) {
            return fail(format!("harq_gain = {} outside [0, 1]", self.harq_gain));
        }
        if self.max_attempts < 1 {
            return fail("max_attempts must be at least 1".into());
        }
        if self.aoi_cap < 1 {
            return fail("aoi_cap must be at least 1".into());
        }
        if !(self.aoi_limit > 0.0) {
            return fail(format!("aoi_limit = {} must be positive", self.aoi_limit));
        }
        // A limit above the cap can never bind; reject it at load.
        if self.aoi_limit > f64::from(self.aoi_cap) {
            return fail(format!(
                "aoi_limit = {} exceeds aoi_cap = {}; the constraint would be vacuous",
                self.aoi_limit, self.aoi_cap
            ));
        }
        if !(self.dpp_weight > 0.0) {
            return fail(format!("dpp_weight = {} must be positive", self.dpp_weight));
        }
        Ok(())
    }

    /// Canonical `key = value` serialization; one line per field, arrays
    /// comma-separated. Parsing this text reproduces the config exactly.
    pub fn to_key_values(&self) -> String {
        let lambdas: Vec<String> = self.arrival_probs.iter().map(|p| p.to_string()).collect();
        format!(
            "num_random_sources = {}\n\
             num_gaw_sources = {}\n\
             arrival_probs = {}\n\
             first_error_prob = {}\n\
             harq_gain = {}\n\
             max_attempts = {}\n\
             aoi_cap = {}\n\
             aoi_limit = {}\n\
             dpp_weight = {}\n\
             rng_seed = {}\n",
            self.num_random_sources,
            self.num_gaw_sources,
            lambdas.join(","),
            self.first_error_prob,
            self.harq_gain,
            self.max_attempts,
            self.aoi_cap,
            self.aoi_limit,
            self.dpp_weight,
            self.rng_seed,
        )
    }

    /// FNV-1a hash of the canonical serialization; embedded in policy and
    /// checkpoint headers so artifacts cannot silently be replayed against a
    /// different instance.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_key_values().as_bytes())
    }

    pub fn from_entries(entries: &mut ConfigEntries) -> Result<Self, ConfigError> {
        let cfg = SystemConfig {
            num_random_sources: entries.take_parsed("num_random_sources")?,
            num_gaw_sources: entries.take_parsed("num_gaw_sources")?,
            arrival_probs: entries.take_list("arrival_probs")?,
            first_error_prob: entries.take_parsed("first_error_prob")?,
            harq_gain: entries.take_parsed("harq_gain")?,
            max_attempts: entries.take_parsed("max_attempts")?,
            aoi_cap: entries.take_parsed("aoi_cap")?,
            aoi_limit: entries.take_parsed("aoi_limit")?,
            dpp_weight: entries.take_parsed("dpp_weight")?,
            rng_seed: entries.take_parsed("rng_seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut entries = ConfigEntries::parse(text)?;
        let cfg = Self::from_entries(&mut entries)?;
        entries.reject_unknown(CONFIG_KEYS)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Parsed `key = value` lines with consumption tracking, so that several
/// typed readers (system config, training config) can share one file and
/// leftover keys are reported as errors.
#[derive(Debug, Clone)]
pub struct ConfigEntries {
    values: BTreeMap<String, String>,
}

impl ConfigEntries {
    /// Parses flat `key = value` lines. Blank lines and `#` comments are
    /// ignored; a repeated key keeps the last value.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        let raw = self
            .take(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))?;
        raw.parse().map_err(|_| ConfigError::InvalidValue {
            key: key.to_string(),
            reason: format!("cannot parse `{raw}`"),
        })
    }

    pub fn take_parsed_or<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| ConfigError::InvalidValue {
                key: key.to_string(),
                reason: format!("cannot parse `{raw}`"),
            }),
        }
    }

    /// Comma-separated list value; an empty value is an empty list.
    pub fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>, ConfigError> {
        let raw = self
            .take(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))?;
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|item| {
                item.trim().parse().map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    reason: format!("cannot parse list item `{}`", item.trim()),
                })
            })
            .collect()
    }

    pub fn take_list_or<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, ConfigError> {
        if self.contains(key) {
            self.take_list(key)
        } else {
            Ok(default)
        }
    }

    /// Errors on any remaining key, listing the accepted ones.
    pub fn reject_unknown(&self, valid: &[&str]) -> Result<(), ConfigError> {
        if let Some(key) = self.values.keys().next() {
            return Err(ConfigError::UnknownKey {
                key: key.clone(),
                valid: valid.join(", "),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SystemConfig {
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
    fn round_trips_through_key_values() {
        let cfg = sample();
        let parsed = SystemConfig::from_str(&cfg.to_key_values()).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn rejects_vacuous_aoi_limit() {
        let mut cfg = sample();
        cfg.aoi_limit = 19.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rejects_arrival_prob_out_of_range() {
        let mut cfg = sample();
        cfg.arrival_probs = vec![0.0];
        assert!(cfg.validate().is_err());
        cfg.arrival_probs = vec![1.0];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_arrival_count_mismatch() {
        let mut cfg = sample();
        cfg.arrival_probs = vec![0.7, 0.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parser_reports_unknown_keys() {
        let text = format!("{}bogus_key = 3\n", sample().to_key_values());
        let err = SystemConfig::from_str(&text).unwrap_err();
        match err {
            ConfigError::UnknownKey { key, valid } => {
                assert_eq!(key, "bogus_key");
                assert!(valid.contains("arrival_probs"));
            }
            other => panic!("expected UnknownKey, got {other}"),
        }
    }

    #[test]
    fn parser_supports_comments_and_blank_lines() {
        let text = "# instance\n\nnum_random_sources = 0\nnum_gaw_sources = 1\n\
                    arrival_probs =\nfirst_error_prob = 0.2\nharq_gain = 0.5\n\
                    max_attempts = 2\naoi_cap = 6\naoi_limit = 3\ndpp_weight = 10\nrng_seed = 7\n";
        let cfg = SystemConfig::from_str(text).unwrap();
        assert_eq!(cfg.num_sources(), 1);
        assert!(cfg.arrival_probs.is_empty());
    }

    #[test]
    fn all_gaw_config_round_trips() {
        let cfg = SystemConfig {
            num_random_sources: 0,
            arrival_probs: vec![],
            ..sample()
        };
        assert!(cfg.validate().is_ok());
        assert_eq!(SystemConfig::from_str(&cfg.to_key_values()).unwrap(), cfg);
    }
}
