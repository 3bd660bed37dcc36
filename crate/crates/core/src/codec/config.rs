//! `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped,
/// later keys override earlier ones. Keys are lower-cased and `_` maps to `-`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            content: raw.to_string(),
            message: "expected key = value".into(),
        })?;
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                content: raw.to_string(),
                message: "empty key".into(),
            });
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    parse_config(&std::fs::read_to_string(path)?)
}
