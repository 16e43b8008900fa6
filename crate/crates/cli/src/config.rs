//! Optional key=value config file named by `RISKMODEL_CONFIG`.
//!
//! Keys mirror the named pipeline parameters; a command-line flag beats
//! the config value, which beats the built-in default.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_ctx, CliError};

pub const CONFIG_KEYS: [&str; 10] = [
    "wstar", "vtilde", "nstar", "mstar", "nupper", "nlower", "rstar", "lookback", "window",
    "seed",
];

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Loads the file named by `RISKMODEL_CONFIG`, or an empty config when
    /// the variable is unset.
    pub fn from_env() -> Result<Self, CliError> {
        match std::env::var_os("RISKMODEL_CONFIG") {
            None => Ok(Self::default()),
            Some(path) => Self::from_file(Path::new(&path)),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(io_ctx(format!("reading config {}", path.display())))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = format!("{}:{}", path.display(), idx + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("{at}: expected key=value")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(CliError::Config(format!("{at}: unknown key `{key}`")));
            }
            if values.insert(key.to_owned(), value.to_owned()).is_some() {
                return Err(CliError::Config(format!("{at}: duplicate key `{key}`")));
            }
        }
        Ok(Self { values })
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                CliError::Config(format!("config value `{raw}` for `{key}` does not parse"))
            }),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.parsed(key)
    }
}

/// Flag > config > default.
pub fn resolve<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        file
    }

    #[test]
    fn parses_known_keys_and_comments() {
        let file = write_config("# comment\nwstar = 0.6\n\nlookback=21\n");
        let config = Config::from_file(file.path()).unwrap();
        assert_eq!(config.f64("wstar").unwrap(), Some(0.6));
        assert_eq!(config.usize("lookback").unwrap(), Some(21));
        assert_eq!(config.usize("window").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let unknown = write_config("bogus=1\n");
        assert!(matches!(
            Config::from_file(unknown.path()),
            Err(CliError::Config(_))
        ));
        let duplicate = write_config("wstar=0.5\nwstar=0.6\n");
        assert!(matches!(
            Config::from_file(duplicate.path()),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn precedence_is_flag_config_default() {
        assert_eq!(resolve(Some(1), Some(2), 3), 1);
        assert_eq!(resolve(None, Some(2), 3), 2);
        assert_eq!(resolve::<i32>(None, None, 3), 3);
    }
}
