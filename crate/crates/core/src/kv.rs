//! Plain-text `key = value` files: one pair per line, `#` starts a comment.

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("line {}: expected 'key = value', got '{raw}'", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Invalid(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Invalid(format!("line {}: duplicate key '{k}'", i + 1)));
        }
    }
    Ok(out)
}

pub fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Invalid(format!("bad value '{v}' for key '{key}'")))
}
