//! `key = value` text files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for KvError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for KvError {}

/// Parses the text into an ordered map. Duplicate keys are an error.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, KvError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| KvError {
            line: idx + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(KvError {
                line: idx + 1,
                message: "empty key".into(),
            });
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(KvError {
                line: idx + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}
