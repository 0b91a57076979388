//! Plain-text key=value configuration with layered precedence:
//! command-line overrides > config file > built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{AdlError, Result};

/// An ordered key=value store; later layers override earlier ones.
#[derive(Debug, Clone, Default)]
pub struct KeyValueConfig {
    map: BTreeMap<String, String>,
}

impl KeyValueConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse a config file: one `key=value` per line, `#` comments, blank
    /// lines ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            AdlError::Config(format!(
                "cannot read config {}: {e}",
                path.as_ref().display()
            ))
        })?;
        let mut cfg = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.insert_pair(line).map_err(|e| {
                AdlError::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    /// Parse `key=value` override arguments.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<Self> {
        let mut cfg = Self::new();
        for p in pairs {
            cfg.insert_pair(p.as_ref())?;
        }
        Ok(cfg)
    }

    fn insert_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            AdlError::Config(format!("expected key=value, got '{pair}'"))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(AdlError::Config(format!("empty key in '{pair}'")));
        }
        self.map.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.map.insert(key.into(), value.to_string());
    }

    /// Apply another layer on top of this one (its values win).
    pub fn overridden_by(mut self, upper: &KeyValueConfig) -> Self {
        for (k, v) in &upper.map {
            self.map.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| AdlError::Config(format!("missing required key '{key}'")))
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                AdlError::Config(format!("key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get_parsed(key)?.unwrap_or(default))
    }

    pub fn require_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse::<T>()
            .map_err(|_| AdlError::Config(format!("key '{key}': cannot parse '{raw}'")))
    }

    /// Comma-separated list of a parseable type, e.g. `timesteps=1000,500,100`.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<T>().map_err(|_| {
                        AdlError::Config(format!("key '{key}': cannot parse '{s}'"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Canonical sorted `key=value` rendering (used for hashing and
    /// manifests).
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
