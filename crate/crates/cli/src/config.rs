//! Workspace configuration: a flat `key=value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `n` | 4 | number of nodes |
//! | `f` | 1 | tolerated faulty nodes, `n >= 3f+1` |
//! | `seed` | 1 | seed for node keys and the network schedule |
//! | `request_ticks` | 18 | ticks before a client request is retried |
//! | `store_retries` | 3 | extra STORE attempts per upload |
//! | `commit_rounds` | 10 | rounds a client waits for its transaction to commit |
//! | `leader_wait_ticks` | 0 | ticks a node waits for a missing wave leader |
//! | `mempool_rounds` | 20 | rounds a pending transaction is kept |
//! | `settle_rounds` | 8 | rounds run after each command so every replica catches up |
//! | `max_file_size` | 67108864 | largest accepted input file in bytes |

use std::fmt;
use std::str::FromStr;

use filedag_core::node::Timeouts;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub n: u32,
    pub f: u32,
    pub seed: u64,
    pub timeouts: Timeouts,
    pub settle_rounds: u64,
    pub max_file_size: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config { n: 4, f: 1, seed: 1, timeouts: Timeouts::default(), settle_rounds: 8, max_file_size: 64 << 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}")]
    Value { line: usize, key: String, value: String },
    #[error("n={n} requires n >= 3f+1 with f={f}")]
    Quorum { n: u32, f: u32 },
}

const KEYS: [&str; 10] = [
    "n",
    "f",
    "seed",
    "request_ticks",
    "store_retries",
    "commit_rounds",
    "leader_wait_ticks",
    "mempool_rounds",
    "settle_rounds",
    "max_file_size",
];

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || self.n < 3 * self.f + 1 {
            return Err(ConfigError::Quorum { n: self.n, f: self.f });
        }
        Ok(())
    }
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        let mut seen = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let (key, value) = text.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            seen.push(key);
            let bad = || ConfigError::Value { line, key: key.into(), value: value.into() };
            let num = value.parse::<u64>().map_err(|_| bad())?;
            let small = || u32::try_from(num).map_err(|_| bad());
            match key {
                "n" => c.n = small()?,
                "f" => c.f = small()?,
                "seed" => c.seed = num,
                "request_ticks" => c.timeouts.request_ticks = num,
                "store_retries" => c.timeouts.store_retries = small()?,
                "commit_rounds" => c.timeouts.commit_rounds = num,
                "leader_wait_ticks" => c.timeouts.leader_wait_ticks = num,
                "mempool_rounds" => c.timeouts.mempool_rounds = num,
                "settle_rounds" => c.settle_rounds = num,
                _ => c.max_file_size = num,
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.timeouts;
        writeln!(out, "# filedag workspace configuration")?;
        writeln!(out, "n={}", self.n)?;
        writeln!(out, "f={}", self.f)?;
        writeln!(out, "seed={}", self.seed)?;
        writeln!(out, "request_ticks={}", t.request_ticks)?;
        writeln!(out, "store_retries={}", t.store_retries)?;
        writeln!(out, "commit_rounds={}", t.commit_rounds)?;
        writeln!(out, "leader_wait_ticks={}", t.leader_wait_ticks)?;
        writeln!(out, "mempool_rounds={}", t.mempool_rounds)?;
        writeln!(out, "settle_rounds={}", self.settle_rounds)?;
        writeln!(out, "max_file_size={}", self.max_file_size)
    }
}
