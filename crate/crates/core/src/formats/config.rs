//! `key = value` configuration text. `#` starts a comment; blank lines are
//! ignored; each key may appear once.

use std::path::Path;
use std::str::FromStr;

use super::read_file;
use crate::error::{FormatError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| {
            FormatError::Parse {
                format: "config",
                line: self.line,
                reason: format!("invalid value `{}` for `{}`", self.value, self.key),
            }
            .into()
        })
    }

    /// Accepts true/false, yes/no, 1/0.
    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(FormatError::Parse {
                format: "config",
                line: self.line,
                reason: format!("`{}` expects a boolean, got `{}`", self.key, self.value),
            }
            .into()),
        }
    }

    pub fn unknown(&self) -> crate::error::Error {
        FormatError::UnknownKey {
            key: self.key.clone(),
            line: self.line,
        }
        .into()
    }
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| FormatError::Parse {
            format: "config",
            line,
            reason: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(FormatError::Parse {
                format: "config",
                line,
                reason: "empty key or value".into(),
            }
            .into());
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(FormatError::Parse {
                format: "config",
                line,
                reason: format!("duplicate key `{key}`"),
            }
            .into());
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(entries)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| FormatError::Parse {
        format: "config",
        line: 0,
        reason: "file is not UTF-8".into(),
    })?;
    parse(text)
}
