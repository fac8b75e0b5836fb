//! Flat `key=value` config files with CLI-flag overrides (flags win).

use crate::CliError;
use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }
}

/// CLI flag if present, else the config-file entry, else the default.
pub fn pick<T>(
    flag: Option<T>,
    file: Option<&ConfigFile>,
    key: &str,
    default: T,
) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(raw) = file.and_then(|f| f.get(key)) {
        return raw
            .parse()
            .map_err(|e| CliError::Config(format!("config key {key}={raw}: {e}")));
    }
    Ok(default)
}

/// Like [`pick`] but the value may be absent entirely.
pub fn pick_opt<T>(
    flag: Option<T>,
    file: Option<&ConfigFile>,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match file.and_then(|f| f.get(key)) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("config key {key}={raw}: {e}"))),
        None => Ok(None),
    }
}
