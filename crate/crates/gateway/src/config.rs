//! `config.toml` loading with policy floor checks.

use std::path::{Path, PathBuf};

use prometheus_core::identity::{PolicyConstants, PolicyViolation};
use prometheus_core::session::DEFAULT_MAX_AGE_SECONDS;
use prometheus_core::token::{DEFAULT_DIGITS, DEFAULT_STEP_SECONDS, MAX_DIGITS, MIN_DIGITS};
use prometheus_core::Timestamp;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{} not found", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    ParseError(String),
    #[error("{0}")]
    PolicyFloorViolation(String),
}

impl ConfigError {
    pub fn name(&self) -> &'static str {
        match self {
            ConfigError::MissingFile(_) => "MissingFile",
            ConfigError::ParseError(_) => "ParseError",
            ConfigError::PolicyFloorViolation(_) => "PolicyFloorViolation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen_address: String,
    pub ca_state_path: PathBuf,
    pub crl_path: PathBuf,
    pub principals_path: PathBuf,
    pub acl_path: PathBuf,
    pub whitelist_path: PathBuf,
    pub audit_log_path: PathBuf,
    pub seeds_path: PathBuf,
    pub cooldowns_path: PathBuf,
    pub gateway_key_path: PathBuf,
    pub resources_dir: PathBuf,
    pub admin_resources: Vec<String>,
    /// Resource that guards the `/admin/*` endpoints.
    pub admin_console: String,
    /// `"real"` or `"simulated:<rfc3339>"`.
    pub clock: String,
    pub max_concurrent_per_ip: u32,
    pub freshness_max_age_seconds: i64,
    pub token_step_seconds: u32,
    pub token_digits: u8,
    pub policy: PolicyConstants,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen_address: "127.0.0.1:8443".into(),
            ca_state_path: "ca.json".into(),
            crl_path: "crl.txt".into(),
            principals_path: "principals.jsonl".into(),
            acl_path: "acl.json".into(),
            whitelist_path: "whitelist.txt".into(),
            audit_log_path: "audit.jsonl".into(),
            seeds_path: "seeds.jsonl".into(),
            cooldowns_path: "cooldowns.json".into(),
            gateway_key_path: "gateway.key".into(),
            resources_dir: "resources".into(),
            admin_resources: vec!["admin-console".into()],
            admin_console: "admin-console".into(),
            clock: "real".into(),
            max_concurrent_per_ip: prometheus_core::guard::DEFAULT_MAX_CONCURRENT_PER_IP,
            freshness_max_age_seconds: DEFAULT_MAX_AGE_SECONDS,
            token_step_seconds: DEFAULT_STEP_SECONDS,
            token_digits: DEFAULT_DIGITS,
            policy: PolicyConstants::default(),
        }
    }
}

impl GatewayConfig {
    /// Relative paths resolve against `home`.
    pub fn resolve(&self, home: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            home.join(path)
        }
    }

    pub fn clock(&self) -> Result<Clock, ConfigError> {
        Clock::parse(&self.clock).map_err(ConfigError::ParseError)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let paths = [
            &self.ca_state_path,
            &self.crl_path,
            &self.principals_path,
            &self.acl_path,
            &self.whitelist_path,
            &self.audit_log_path,
            &self.seeds_path,
            &self.cooldowns_path,
            &self.gateway_key_path,
            &self.resources_dir,
        ];
        if paths.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(ConfigError::ParseError("paths must be non-empty".into()));
        }
        self.policy
            .validate()
            .map_err(|PolicyViolation { field, value, limit }| {
                ConfigError::PolicyFloorViolation(format!("{field} = {value} (limit {limit})"))
            })?;
        if self.max_concurrent_per_ip == 0 {
            return Err(ConfigError::ParseError("max_concurrent_per_ip must be positive".into()));
        }
        if self.freshness_max_age_seconds <= 0 {
            return Err(ConfigError::ParseError("freshness_max_age_seconds must be positive".into()));
        }
        if self.token_step_seconds == 0 || !(MIN_DIGITS..=MAX_DIGITS).contains(&self.token_digits) {
            return Err(ConfigError::ParseError("token_step_seconds / token_digits out of range".into()));
        }
        if !self.admin_resources.contains(&self.admin_console) {
            return Err(ConfigError::ParseError("admin_console must be listed in admin_resources".into()));
        }
        self.clock()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<GatewayConfig, ConfigError> {
    let config: GatewayConfig = toml::from_str(text).map_err(|e| ConfigError::ParseError(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<GatewayConfig, ConfigError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ConfigError::MissingFile(path.to_path_buf())),
        Err(e) => return Err(ConfigError::ParseError(e.to_string())),
    };
    parse_config(&text)
}

/// `simulated:<rfc3339>` start time, if the config asks for one.
pub fn simulated_start(config: &GatewayConfig) -> Option<Timestamp> {
    match config.clock() {
        Ok(Clock::Simulated(c)) => Some(c.now()),
        _ => None,
    }
}
