//! Plain `key = value` configuration files.

use std::collections::BTreeMap;

use thiserror::Error;

/// Keys accepted in a configuration file; each mirrors the flag of the same
/// name.
pub const KEYS: &[&str] = &[
    "case",
    "n",
    "tau",
    "T",
    "levels",
    "ref",
    "out",
    "jobs",
    "tol",
    "seed",
    "fields",
    "mesh",
    "write-mesh",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

/// Parsed entries with the line each came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses one entry per line. `#` starts a comment; blank lines are
/// ignored. Unknown or repeated keys are errors.
pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!(
                "unknown key `{key}` (expected one of {})",
                KEYS.join(", ")
            )));
        }
        if value.is_empty() {
            return Err(err(format!("missing value for `{key}`")));
        }
        if let Some((_, first)) = entries.insert(key.to_string(), (value.to_string(), line)) {
            return Err(err(format!("`{key}` already set on line {first}")));
        }
    }
    Ok(ConfigFile { entries })
}
