//! `key = value` configuration files. `#` starts a comment.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{bail, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(Config, "line {}: expected `key = value`, got {raw:?}", i + 1);
            };
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                bail!(Config, "line {}: duplicate key {k}", i + 1);
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Inserts or overrides one entry.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.trim().to_string(), value.trim().to_string());
    }

    /// Removes and parses `key`; `Ok(None)` when it is absent.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| crate::Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    /// Errors if any key was never taken.
    pub fn finish(self) -> Result<()> {
        if let Some(k) = self.entries.keys().next() {
            bail!(Config, "unknown configuration key {k:?}");
        }
        Ok(())
    }
}

/// Parses `lo,hi` (or a single value for both).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range(pub f64, pub f64);

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| e.to_string());
        match s.split_once(',') {
            Some((a, b)) => Ok(Range(parse(a)?, parse(b)?)),
            None => {
                let v = parse(s)?;
                Ok(Range(v, v))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_take() {
        let mut kv = KeyValues::parse("a = 3 # three\n\nb=x\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(3));
        assert_eq!(kv.take::<u32>("zz").unwrap(), None);
        assert!(kv.clone().finish().is_err());
        assert!(kv.take::<u32>("b").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        assert_eq!("-5,5".parse::<Range>().unwrap(), Range(-5.0, 5.0));
    }
}
