// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat `key = value` settings files. Flags given on the command line
//! override values from the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a settings file may contain. Keys mirror the long flag names.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "mc-draws",
    "seed",
    "out",
    "model",
    "batch-size",
    "batch-column",
    "value-column",
    "columns",
    "nu",
    "mu0",
    "sigma0-sq",
    "dof",
    "gibbs-iters",
    "gibbs-burn",
    "sweep",
    "sims",
    "max-n",
    "iters",
    "burn",
    "proposal-sd",
    "thin",
    "prior-sd",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Input(format!("{origin}:{}: expected `key = value`, got {line:?}", i + 1)));
            };
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Input(format!("{origin}:{}: unknown setting {key:?}", i + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// The flag value if given, else the file value, else `None`.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Input(format!("setting {key} = {v:?}: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let s = Settings::parse("alpha = 0.1\n# comment\nmc_draws=50 # trailing\n", "cfg").unwrap();
        assert_eq!(s.get_or("alpha", None, 0.5).unwrap(), 0.1);
        assert_eq!(s.get_or("alpha", Some(0.3), 0.5).unwrap(), 0.3);
        assert_eq!(s.get_or::<usize>("mc-draws", None, 1).unwrap(), 50);
        assert_eq!(s.get_or("seed", None, 7u64).unwrap(), 7);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Settings::parse("colour = red", "cfg").is_err());
        assert!(Settings::parse("alpha 0.1", "cfg").is_err());
        let s = Settings::parse("alpha = lots", "cfg").unwrap();
        assert!(s.get::<f64>("alpha", None).is_err());
    }
}
