//! Flat `key = value` configuration files. `#` starts a comment line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Parsed entries keyed by name, each remembering its line number.
#[derive(Debug, Default)]
pub struct KvMap {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed.split_once('=').ok_or(KvError::Syntax { line })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(KvError::Syntax { line });
            }
            if entries.insert(key.clone(), (line, v.trim().to_string())).is_some() {
                return Err(KvError::Duplicate { line, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, KvError> {
        let text = fs::read_to_string(path).map_err(|e| KvError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Rejects keys outside `known`.
    pub fn restrict(&self, known: &[&str]) -> Result<(), KvError> {
        for (key, (line, _)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(KvError::UnknownKey {
                    line: *line,
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` with a custom function when present.
    pub fn with<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => f(v).map(Some).map_err(|message| KvError::Value {
                line: *line,
                key: key.to_string(),
                message,
            }),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T::Err: std::fmt::Display,
    {
        self.with(key, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    /// Overwrites `slot` when `key` is present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), KvError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_lines() {
        let kv = KvMap::parse("# comment\n a = 1 \n\nb=x=y\n").unwrap();
        assert_eq!(kv.get::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.raw("b"), Some("x=y"));
        assert_eq!(kv.get::<u32>("missing").unwrap(), None);
        assert!(matches!(kv.get::<u32>("b"), Err(KvError::Value { line: 4, .. })));
        assert!(matches!(kv.restrict(&["a"]), Err(KvError::UnknownKey { line: 4, .. })));
        assert_eq!(KvMap::parse("novalue\n").unwrap_err(), KvError::Syntax { line: 1 });
        assert!(matches!(KvMap::parse("a=1\na=2"), Err(KvError::Duplicate { line: 2, .. })));
    }
}
