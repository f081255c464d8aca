//! Flat `key = value` text files with `#` comments.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct KvFile {
    pub path: PathBuf,
    pub entries: Vec<KvEntry>,
}

impl KvFile {
    pub fn parse(path: impl Into<PathBuf>, text: &str) -> Result<Self> {
        let path = path.into();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path,
                    line: i + 1,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path,
                    line: i + 1,
                    message: format!("malformed key `{key}`"),
                });
            }
            entries.push(KvEntry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(Self { path, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn error(&self, entry: &KvEntry, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: entry.line,
            message: message.into(),
        }
    }

    /// Parses `entry.value` as `T`, reporting the line on failure.
    pub fn value<T: std::str::FromStr>(&self, entry: &KvEntry) -> Result<T> {
        entry
            .value
            .parse()
            .map_err(|_| self.error(entry, format!("invalid value `{}` for `{}`", entry.value, entry.key)))
    }
}

pub fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}
