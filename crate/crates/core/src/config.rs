//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys are the snake_case field names of the target struct and unknown keys
//! are rejected.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// A struct that can be populated from flat key/value assignments.
pub trait KeyValueConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError>;

    fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_assignments(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text)
    }
}

/// Splits `text` into ordered `(key, value)` pairs.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        out.push(split_assignment(line).ok_or_else(|| ConfigError::Syntax {
            line: idx + 1,
            text: raw.to_string(),
        })?);
    }
    Ok(out)
}

/// Parses a single `key=value` override.
pub fn split_assignment(s: &str) -> Option<(String, String)> {
    let (key, value) = s.split_once('=')?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() || value.is_empty() {
        return None;
    }
    Some((key.to_string(), value.to_string()))
}

pub(crate) fn parse_value<T>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// Implements [`KeyValueConfig`] for a struct whose fields all implement `FromStr`.
macro_rules! key_value_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::KeyValueConfig for $ty {
            fn set(&mut self, key: &str, value: &str) -> Result<(), $crate::config::ConfigError> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::config::parse_value(key, value)?;
                    })*
                    _ => return Err($crate::config::ConfigError::UnknownKey { key: key.to_string() }),
                }
                Ok(())
            }
        }
    };
}

pub(crate) use key_value_fields;
