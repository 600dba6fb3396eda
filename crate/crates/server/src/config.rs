use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tutor_core::gateway::{GatewayConfig, ServiceEndpoint, ServiceKind};
use tutor_core::session::{ConfigOverrides, SessionConfig, SessionError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("endpoint table {table} declares kind {declared}")]
    KindMismatch { table: ServiceKind, declared: ServiceKind },
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Server configuration file.
///
/// ```toml
/// bind = "0.0.0.0:8080"
/// data_dir = "/var/lib/tutor"
///
/// [defaults]
/// min_gap_grammar = 2
/// aggregation_setup = "A"
///
/// [endpoints.grammar]
/// kind = "grammar"
/// base_url = "http://gec.internal:9000/correct"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Missing kinds fall back to the in-process stubs.
    #[serde(default)]
    pub endpoints: BTreeMap<ServiceKind, ServiceEndpoint>,
    /// Policy defaults applied to every new session before its own overrides.
    #[serde(default)]
    pub defaults: ConfigOverrides,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            data_dir: default_data_dir(),
            endpoints: BTreeMap::new(),
            defaults: ConfigOverrides::default(),
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let config: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (table, ep) in &self.endpoints {
            if *table != ep.kind {
                return Err(ConfigError::KindMismatch { table: *table, declared: ep.kind });
            }
        }
        self.session_defaults()?;
        Ok(())
    }

    /// Gateway config with secrets filled from the environment.
    pub fn gateway_config(&self) -> GatewayConfig {
        let mut g = GatewayConfig { endpoints: self.endpoints.clone() };
        g.apply_env_overrides();
        g
    }

    pub fn session_defaults(&self) -> Result<SessionConfig, SessionError> {
        SessionConfig::default().with_overrides(&self.defaults)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: ServerConfig = toml::from_str("").unwrap();
        assert_eq!(c, ServerConfig::default());
        assert_eq!(c.session_defaults().unwrap(), SessionConfig::default());
    }

    #[test]
    fn parses_all_keys() {
        let c: ServerConfig = toml::from_str(
            r#"
            bind = "0.0.0.0:9000"
            data_dir = "/tmp/x"
            [defaults]
            min_gap_empathy = 6
            [endpoints.emotion]
            kind = "emotion"
            base_url = "http://ser:1/score"
            timeout_secs = 5
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.session_defaults().unwrap().spacing.min_gap_empathy, 6);
        assert_eq!(c.gateway_config().endpoint(ServiceKind::Emotion).timeout_secs, 5.0);
        assert!(c.gateway_config().endpoint(ServiceKind::Asr).is_stub());
    }

    #[test]
    fn rejects_mismatched_kind_and_bad_defaults() {
        let c: ServerConfig =
            toml::from_str("[endpoints.asr]\nkind = \"tts\"\nbase_url = \"stub\"\n").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::KindMismatch { .. })));
        let c: ServerConfig = toml::from_str("[defaults]\nmin_gap_grammar = -3\n").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Session(SessionError::InvalidConfig(_)))));
        assert!(toml::from_str::<ServerConfig>("port = 1").is_err());
    }
}
