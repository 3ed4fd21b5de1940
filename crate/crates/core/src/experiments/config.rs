use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

/// Flat `key = value` configuration. Lines starting with `#` are comments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| config_err(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(config_err(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(config_err(format!("duplicate key '{key}'")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Rejects keys outside `allowed` and the shared keys `experiment`,
    /// `seed` and `out`; checks `experiment`, if present, names `command`.
    pub fn check_keys(&self, command: &str, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            let shared = matches!(key.as_str(), "experiment" | "seed" | "out");
            if !shared && !allowed.contains(&key.as_str()) {
                return Err(config_err(format!("unknown key '{key}' for {command}")));
            }
        }
        if let Some(name) = self.entries.get("experiment") {
            if name != command {
                return Err(config_err(format!("config is for '{name}', not '{command}'")));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")?.ok_or_else(|| config_err("missing seed"))
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.entries.get("out").map(PathBuf::from)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| config_err(format!("invalid value '{v}' for {key}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| config_err(format!("invalid entry '{s}' in {key}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        Ok(self.list(key)?.unwrap_or(default))
    }
}

/// Positive, strictly increasing list.
pub fn check_increasing(key: &str, values: &[usize]) -> Result<()> {
    if values.is_empty() || values[0] == 0 || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err(format!("{key} must be a strictly increasing list of positive integers")));
    }
    Ok(())
}
