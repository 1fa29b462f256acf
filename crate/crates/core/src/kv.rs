//! Plain-text `key = value` documents with optional `[section]` headers.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique
//! within a section. Every entry remembers its line number so errors can
//! point at it.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {key}{}: {message}", if .key.is_empty() { "" } else { " " })]
pub struct KvError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KvEntry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl KvEntry {
    pub fn error(&self, message: impl Into<String>) -> KvError {
        KvError {
            line: self.line,
            key: self.qualified_key(),
            message: message.into(),
        }
    }

    /// `section.key`, or just `key` at top level.
    pub fn qualified_key(&self) -> String {
        if self.section.is_empty() {
            self.key.clone()
        } else {
            format!("{}.{}", self.section, self.key)
        }
    }

    pub fn parse<T: FromStr>(&self) -> Result<T, KvError>
    where
        T::Err: fmt::Display,
    {
        self.value
            .parse()
            .map_err(|e: T::Err| self.error(format!("invalid value `{}` ({e})", self.value)))
    }

    /// Comma-separated items, trimmed, empty items dropped.
    pub fn list(&self) -> Vec<String> {
        split_list(&self.value)
    }

    pub fn parse_list<T: FromStr>(&self) -> Result<Vec<T>, KvError>
    where
        T::Err: fmt::Display,
    {
        self.list()
            .iter()
            .map(|item| {
                item.parse()
                    .map_err(|e: T::Err| self.error(format!("invalid item `{item}` ({e})")))
            })
            .collect()
    }
}

pub fn split_list(value: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for ch in value.chars() {
        match ch {
            '(' => {
                depth += 1;
                current.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                current.push(ch);
            }
            ',' if depth == 0 => {
                items.push(std::mem::take(&mut current));
            }
            _ => current.push(ch),
        }
    }
    items.push(current);
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDocument {
    entries: Vec<KvEntry>,
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries: Vec<KvEntry> = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| KvError {
                    line,
                    key: String::new(),
                    message: format!("unterminated section header `{trimmed}`"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| KvError {
                line,
                key: String::new(),
                message: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(KvError {
                    line,
                    key,
                    message: "empty key".into(),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.section == section && e.key == key) {
                return Err(KvError {
                    line,
                    key: prev.qualified_key(),
                    message: format!("duplicate key (first set on line {})", prev.line),
                });
            }
            entries.push(KvEntry {
                section: section.clone(),
                key,
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[KvEntry] {
        &self.entries
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&KvEntry> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
    }

    /// Entries of `section` whose key is not in `known`.
    pub fn unknown_keys<'a>(&'a self, section: &'a str, known: &'a [&str]) -> impl Iterator<Item = &'a KvEntry> {
        self.entries
            .iter()
            .filter(move |e| e.section == section && !known.contains(&e.key.as_str()))
    }
}
