//! Flat `key = value` text files with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigFile {
                    path,
                    line: line_no,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
                return Err(Error::ConfigFile {
                    path,
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { path, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e: T::Err| Error::ConfigFile {
                path: self.path.clone(),
                line: *line,
                msg: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::ConfigFile {
            path: self.path.clone(),
            line: 0,
            msg: format!("missing key `{key}`"),
        })
    }

    /// Rejects any key not in `known`.
    pub fn deny_unknown(&self, known: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::ConfigFile {
                    path: self.path.clone(),
                    line: *line,
                    msg: format!("unknown key `{key}`"),
                });
            }
        }
        Ok(())
    }
}
