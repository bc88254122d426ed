use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_REPO_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_BROKER_BIND: &str = "127.0.0.1:8081";
pub const DEFAULT_TIMEOUT_SECS: u64 = 10;

/// Settings read from the optional TOML config file. Every field can be
/// overridden by the matching command-line flag.
#[derive(Debug, Clone, Default, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub repo_root: Option<PathBuf>,
    pub repo_bind: Option<String>,
    pub broker_bind: Option<String>,
    /// Public base URL the repository advertises in role URLs.
    pub base_url: Option<String>,
    pub registry_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_output_bytes: Option<usize>,
    /// Repository that client commands talk to.
    pub repo_url: Option<String>,
    /// Broker that client commands talk to.
    pub broker_url: Option<String>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Picks the flag value, then the config value.
pub fn pick<T: Clone>(flag: &Option<T>, config: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| config.clone())
}

pub fn require<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{what} is required (flag or config file)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c = CliConfig::parse("repo_root = \"/srv/repo\"\ntimeout_secs = 5\n").unwrap();
        assert_eq!(c.repo_root.as_deref(), Some(Path::new("/srv/repo")));
        assert_eq!(c.timeout_secs, Some(5));
        assert!(CliConfig::parse("repo_rot = \"x\"").is_err());
    }

    #[test]
    fn flags_override_config() {
        assert_eq!(pick(&Some(1), &Some(2)), Some(1));
        assert_eq!(pick(&None, &Some(2)), Some(2));
        assert_eq!(pick::<u8>(&None, &None), None);
    }
}
