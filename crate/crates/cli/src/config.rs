//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! flag names of the subcommand, with `-` or `_` as separator. Command-line
//! flags take precedence over file values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
    source: String,
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl FileConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: &Path, allowed: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config '{}': {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string(), allowed)
    }

    pub fn parse(text: &str, source: &str, allowed: &[String]) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{source}:{}: expected key = value, got '{line}'", i + 1))
            })?;
            let key = normalize_key(key);
            if !allowed.contains(&key) {
                return Err(CliError::Usage(format!(
                    "{source}:{}: unknown key '{key}'",
                    i + 1
                )));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!(
                    "{source}:{}: key '{key}' given twice",
                    i + 1
                )));
            }
        }
        Ok(Self {
            values,
            source: source.to_string(),
        })
    }

    /// The flag value if present, else the parsed file value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::Usage(format!("{}: bad value '{raw}' for '{key}': {e}", self.source))
            }),
        }
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Boolean switches: set by the flag or by `key = true` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn allowed() -> Vec<String> {
        ["atoms", "out_iter", "no_side_info"].map(String::from).to_vec()
    }

    #[test]
    fn parses_comments_and_dashes() {
        let cfg = FileConfig::parse("# c\n\natoms = 12\nout-iter=3\n", "f", &allowed()).unwrap();
        assert_eq!(cfg.or(None, "atoms", 0usize).unwrap(), 12);
        assert_eq!(cfg.or(Some(5), "out_iter", 0usize).unwrap(), 5);
        assert_eq!(cfg.or(None, "out_iter", 0usize).unwrap(), 3);
        assert!(!cfg.switch(false, "no_side_info").unwrap());
    }

    #[test]
    fn unknown_and_duplicate_keys_are_named() {
        let err = FileConfig::parse("atomz = 1\n", "f", &allowed()).unwrap_err();
        assert!(err.to_string().contains("atomz"));
        let err = FileConfig::parse("atoms = 1\natoms = 2\n", "f", &allowed()).unwrap_err();
        assert!(err.to_string().contains("twice"));
        let err = FileConfig::parse("atoms\n", "f", &allowed()).unwrap_err();
        assert!(err.to_string().contains("key = value"));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let cfg = FileConfig::parse("atoms = many\n", "f", &allowed()).unwrap();
        assert!(matches!(cfg.pick::<usize>(None, "atoms"), Err(CliError::Usage(_))));
    }
}
