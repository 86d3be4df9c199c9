//! Plain-text `key = value` run configuration. Flags override file values, and every
//! value a command reads is recorded so the output can embed the resolved config.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use diffusionlet::{Error, Result};

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value, got {raw:?}", n + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("config line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

impl Resolver {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Parse(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }

    /// Flag value, else file value, else `default`.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let value = match flag {
            Some(v) => v,
            None => self.lookup(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`Resolver::get`] without a default.
    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        let value = match flag {
            Some(v) => v,
            None => self
                .lookup(key)?
                .ok_or_else(|| Error::InvalidParameter(format!("missing --{key} (flag or config key)")))?,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.lookup(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Comma-separated list.
    pub fn list(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<f64>> {
        let raw: String = self.get(key, flag, default.to_string())?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("{key}: bad number {s:?}"))))
            .collect()
    }

    pub fn into_resolved(self) -> BTreeMap<String, String> {
        self.resolved
    }
}
