//! Flat `key = value` configuration files. Command-line flags override
//! file values; the effective configuration is echoed to stderr so a run
//! can be reproduced from its log.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use parasent_core::{Error, Result};

#[derive(Debug, Default)]
pub struct FileConfig {
    map: BTreeMap<String, String>,
}

impl FileConfig {
    /// Parse a config file, rejecting keys the command does not know.
    pub fn load(path: Option<&Path>, valid_keys: &[&str]) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(i + 1, format!("expected `key = value`, found `{line}`"))
            })?;
            let key = key.trim().to_string();
            if !valid_keys.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown key `{key}` in {}; valid keys: {}",
                    path.display(),
                    valid_keys.join(", ")
                )));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(FileConfig { map })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("bad value `{raw}` for config key `{key}`"))
            }),
        }
    }
}

/// Flag value, else file value, else none.
pub fn resolve<T: FromStr>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Flag value, else file value, else the default.
pub fn resolve_or<T: FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(resolve(flag, file, key)?.unwrap_or(default))
}

/// Print the effective configuration (sorted) to stderr.
pub fn echo_config(command: &str, pairs: &[(&str, String)]) {
    let mut sorted: Vec<_> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    eprintln!("# effective config ({command})");
    for (key, value) in sorted {
        eprintln!("{key} = {value}");
    }
}
