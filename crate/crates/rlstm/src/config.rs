//! `key = value` configuration files. Command-line flags take precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "batch_size",
    "dims",
    "dims_preset",
    "epochs",
    "lr",
    "max_turns",
    "min_count",
    "min_turns",
    "model",
    "optimizer",
    "seed",
    "test_fraction",
    "threads",
    "tokenizer",
    "top_n",
    "top_terms",
    "valid_fraction",
    "window",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    path: Option<PathBuf>,
    values: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    /// Blank lines and lines starting with `#` are ignored. Dashes in keys
    /// are read as underscores.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::format(path, i + 1, "expected key = value"))?;
            let key = key.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::format(path, i + 1, "empty key"));
            }
            if !KNOWN_KEYS.contains(&key.as_str()) {
                log::warn!("{}:{}: unknown key '{key}' ignored", path.display(), i + 1);
            }
            if values.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(CliError::format(path, i + 1, format!("duplicate key '{key}'")));
            }
        }
        Ok(ConfigFile {
            path: Some(path.to_path_buf()),
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let Some((raw, line)) = self.values.get(key) else {
            return Ok(None);
        };
        let path = self.path.as_deref().unwrap_or(Path::new("<config>"));
        raw.parse()
            .map(Some)
            .map_err(|e| CliError::format(path, *line, format!("bad value for '{key}': {e}")))
    }

    /// The flag if given, else the file's value, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Like [`resolve`](Self::resolve) without a default.
    pub fn resolve_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Snapshot of the raw values, for manifests.
    pub fn entries(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }
}
