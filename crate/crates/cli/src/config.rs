//! Flat `key = value` config files. Keys mirror the long flag names
//! (case-insensitive, `_` and `-` interchangeable); flags on the command line
//! win over the file. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::report::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    "alpha", "r", "m", "n", "t", "length", "problem", "lambda", "method", "tol", "max-iter", "flavor", "ref",
    "mesh", "gamma", "sharp-ell", "plus-lambda", "trials", "seed", "out", "json", "stride", "sequential",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value, got '{raw}'", lineno + 1)))?;
            let key = normalize(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Input(format!("config line {}: unknown key '{}'", lineno + 1, k.trim())));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Input(format!("config line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Command-line value if given, else the file's value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|s| s.parse::<T>().map_err(|e| CliError::Input(format!("config key '{key}' = '{s}': {e}"))))
            .transpose()
    }

    pub fn pick_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?.ok_or_else(|| CliError::Input(format!("missing required value '{key}' (flag --{key} or config key)")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|s| {
                s.split(',')
                    .map(|p| p.trim().parse::<T>().map_err(|e| CliError::Input(format!("config key '{key}' item '{p}': {e}"))))
                    .collect()
            })
            .transpose()
    }

    /// A switch is on if the flag was given or the file says true.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        match self.raw(key).map(str::to_ascii_lowercase).as_deref() {
            None | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some(other) => Err(CliError::Input(format!("config key '{key}': expected true or false, got '{other}'"))),
        }
    }
}
