//! Flat `key = value` text format shared by scene and experiment files.
//!
//! UTF-8, one entry per line, `#` starts a comment, blank lines ignored.
//! Keys may repeat (e.g. `dipole`); order carries no meaning except among
//! repeated keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug)]
pub struct KvFile {
    path: PathBuf,
    entries: Vec<Entry>,
}

impl KvFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    path,
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path,
                    line,
                    message: "empty key".into(),
                });
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    /// The single entry for `key`; a repeated scalar key is an error.
    pub fn entry(&self, key: &str) -> Result<Option<&Entry>> {
        let mut found = self.entries.iter().filter(|e| e.key == key);
        let first = found.next();
        if let Some(dup) = found.next() {
            return Err(self.error(dup.line, format!("duplicate key `{key}`")));
        }
        Ok(first)
    }

    pub fn all(&self, key: &str) -> impl Iterator<Item = &Entry> {
        let key = key.to_string();
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entry(key)? {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|_| self.error(e.line, format!("cannot parse value `{}` for `{key}`", e.value))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 0,
            message: format!("missing required key `{key}`"),
        })
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entry(key)? {
            None => Ok(None),
            Some(e) => parse_list(&e.value)
                .map(Some)
                .map_err(|msg| self.error(e.line, format!("`{key}`: {msg}"))),
        }
    }

    /// Reject keys that no consumer recognizes. `prefixes` admit key families
    /// such as `gamma_*`.
    pub fn check_known(&self, known: &[&str], prefixes: &[&str]) -> Result<()> {
        let known: BTreeSet<&str> = known.iter().copied().collect();
        for e in &self.entries {
            let ok = known.contains(e.key.as_str()) || prefixes.iter().any(|p| e.key.starts_with(p));
            if !ok {
                return Err(self.error(e.line, format!("unknown key `{}`", e.key)));
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse list item `{s}`")))
        .collect()
}
