//! Flat `key = value` documents shared by model and training configs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs. Consumers `take` the keys they understand and
/// call [`KvMap::finish`] so that anything left over is rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    /// `#` starts a comment; blank lines are ignored; duplicate keys are an
    /// error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    /// Inserts or replaces a value (command-line overrides).
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.take_raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list of exactly `N` values.
    pub fn take_array<T, const N: usize>(&mut self, key: &str) -> Result<Option<[T; N]>>
    where
        T: FromStr + Copy + Default,
        T::Err: Display,
    {
        let Some(raw) = self.take_raw(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(Error::Config(format!("{key} needs {N} comma-separated values, got {raw:?}")));
        }
        let mut out = [T::default(); N];
        for (slot, p) in out.iter_mut().zip(parts) {
            *slot = p
                .parse()
                .map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))?;
        }
        Ok(Some(out))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown config keys: {}", keys.join(", "))))
        }
    }
}

/// Parses `true`/`false`/`on`/`off`/`1`/`0`.
pub fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_leftovers() {
        let mut kv = KvMap::parse("# model\na = 3\n\nb=1, 2 ,3  # trailing\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(3));
        assert_eq!(kv.take_array::<u32, 3>("b").unwrap(), Some([1, 2, 3]));
        assert!(kv.finish().is_ok());

        let mut kv = KvMap::parse("a = 1\nzzz = 2").unwrap();
        kv.take_raw("a");
        let msg = kv.finish().unwrap_err().to_string();
        assert!(msg.contains("zzz"), "{msg}");
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KvMap::parse("a=1\na=2").is_err());
        assert!(KvMap::parse("novalue").is_err());
        let mut kv = KvMap::parse("a = x").unwrap();
        assert!(kv.take::<u32>("a").is_err());
        let mut kv = KvMap::parse("a = 1,2").unwrap();
        assert!(kv.take_array::<u32, 3>("a").is_err());
    }
}
