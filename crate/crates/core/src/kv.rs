//! Strict `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::{Error, Result};

pub(crate) struct KeyValues {
    source: String,
    map: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub(crate) fn parse(text: &str, source: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, i + 1, format!("expected `key = value`, got `{line}`")))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(source, i + 1, format!("duplicate key `{k}`")));
            }
        }
        Ok(Self {
            source: source.to_string(),
            map,
        })
    }

    /// Removes and parses `key`, or returns `default` when absent.
    pub(crate) fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.map.remove(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|e| Error::parse(&self.source, line, format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    /// Fails on the first key (by line) nobody asked for.
    pub(crate) fn finish(self) -> Result<()> {
        match self.map.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::UnknownKey {
                source_name: self.source,
                line,
                key,
            }),
        }
    }
}
