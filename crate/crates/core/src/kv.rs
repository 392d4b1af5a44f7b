//! Flat `key = value` text files shared by architecture, dataset and
//! training configs. Keys are dotted paths; `#` starts a comment; values are
//! scalars or comma-separated lists.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key-value file. Readers remove keys as they consume them and call
/// [`KvMap::finish`] to reject leftovers.
#[derive(Clone, Debug)]
pub struct KvMap {
    file: String,
    entries: BTreeMap<String, Entry>,
}

impl KvMap {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { file: file.to_string(), line, msg };
            let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')) {
                return Err(err(format!("invalid key `{key}`")));
            }
            let entry = Entry { value: value.trim().to_string(), line };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(KvMap { file: file.to_string(), entries })
    }

    fn invalid(&self, key: &str, line: usize, msg: impl Display) -> Error {
        Error::InvalidSpec { path: key.to_string(), msg: format!("{msg} ({}:{line})", self.file) }
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|e| e.value)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|err| self.invalid(key, e.line, format!("`{}`: {err}", e.value))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.take(key)?.ok_or_else(|| Error::InvalidSpec { path: key.to_string(), msg: format!("missing required key in {}", self.file) })
    }

    /// Comma list; an empty value is an empty list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.remove(key) else {
            return Ok(None);
        };
        if e.value.is_empty() {
            return Ok(Some(Vec::new()));
        }
        e.value
            .split(',')
            .enumerate()
            .map(|(i, item)| {
                let item = item.trim();
                item.parse().map_err(|err| self.invalid(&format!("{key}[{i}]"), e.line, format!("`{item}`: {err}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, e)) => Err(Error::InvalidSpec { path: key, msg: format!("unknown key ({}:{})", self.file, e.line) }),
        }
    }
}

/// Serializes `(key, value)` pairs in the format [`KvMap::parse`] reads.
#[derive(Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn put_list<T: Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.put(key, joined.join(", "))
    }

    pub fn finish(self) -> String {
        self.out
    }
}
