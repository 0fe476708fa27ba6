//! Declarative configuration files and the setting-resolution order.
//!
//! Attack campaigns and rewriter endpoints are described in TOML. Endpoint
//! URL, model name, auth token, and concurrency resolve in ascending
//! precedence: config file, then command-line flag, then environment
//! variable (`OBBR_ENDPOINT`, `OBBR_MODEL`, `OBBR_AUTH_TOKEN`,
//! `OBBR_CONCURRENCY`).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use obbr_core::attack::{default_triggers, AttackSpec, Trigger};
use obbr_core::client::RetryPolicy;
use obbr_core::dataset::AttackTag;

pub const ENV_ENDPOINT: &str = "OBBR_ENDPOINT";
pub const ENV_MODEL: &str = "OBBR_MODEL";
pub const ENV_AUTH_TOKEN: &str = "OBBR_AUTH_TOKEN";
pub const ENV_CONCURRENCY: &str = "OBBR_CONCURRENCY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("environment variable {name} is not valid: {message}")]
    Env { name: String, message: String },
}

/// Trigger-less mix parameters for PIA campaigns.
#[derive(Debug, Clone, Deserialize)]
pub struct PiaSection {
    pub total: usize,
    pub malicious_fraction: f64,
    pub malicious_path: PathBuf,
}

#[derive(Debug, Deserialize)]
struct AttackSpecFile {
    kind: String,
    #[serde(default)]
    triggers: Option<Vec<Trigger>>,
    #[serde(default)]
    poison_ratio: Option<f64>,
    #[serde(default)]
    target_responses: Vec<String>,
    seed: u64,
    #[serde(default)]
    pia: Option<PiaSection>,
}

/// A parsed attack campaign: the core spec plus the PIA mix section when the
/// campaign is trigger-less.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub spec: AttackSpec,
    pub pia: Option<PiaSection>,
}

/// Loads an attack campaign from TOML. Triggers default to the stock set for
/// the kind when omitted; PIA campaigns must carry a `[pia]` section and
/// trigger-based ones a `poison_ratio`.
pub fn load_attack_config(path: &Path) -> Result<AttackConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: AttackSpecFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let invalid = |message: String| ConfigError::Invalid {
        path: path.to_path_buf(),
        message,
    };

    let kind = AttackTag::from_str(&file.kind).map_err(|e| invalid(e.to_string()))?;
    let triggers: Vec<Trigger> = file.triggers.unwrap_or_else(|| default_triggers(kind));
    if kind == AttackTag::Pia {
        let pia = file
            .pia
            .ok_or_else(|| invalid("kind = \"PIA\" requires a [pia] section".to_string()))?;
        // For PIA the ratio field echoes the mix fraction; the mix itself is
        // driven by the [pia] section.
        let spec = AttackSpec {
            kind,
            triggers,
            poison_ratio: pia.malicious_fraction,
            target_responses: file.target_responses,
            seed: file.seed,
        };
        return Ok(AttackConfig {
            spec,
            pia: Some(pia),
        });
    }

    let poison_ratio = file
        .poison_ratio
        .ok_or_else(|| invalid(format!("kind = \"{kind}\" requires poison_ratio")))?;
    let spec = AttackSpec {
        kind,
        triggers,
        poison_ratio,
        target_responses: file.target_responses,
        seed: file.seed,
    };
    spec.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(AttackConfig { spec, pia: None })
}

/// Rewriter/evaluator endpoint settings from a TOML file; every field
/// optional so flags and environment variables can fill the rest.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct EndpointSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub auth_token: Option<String>,
    pub concurrency: Option<usize>,
    pub k: Option<usize>,
    pub max_new_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<u64>,
    pub retry: Option<RetryPolicy>,
    /// Optional external judge endpoint for ASR scoring.
    pub judge_endpoint: Option<String>,
    pub judge_model: Option<String>,
}

pub fn load_endpoint_settings(path: &Path) -> Result<EndpointSettings, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Resolves one string setting: config file < flag < environment.
pub fn resolve_string(
    env_name: &str,
    flag: Option<String>,
    file: Option<String>,
) -> Option<String> {
    std::env::var(env_name).ok().or(flag).or(file)
}

/// Resolves one parseable setting with the same precedence.
pub fn resolve_parsed<T: FromStr>(
    env_name: &str,
    flag: Option<T>,
    file: Option<T>,
) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if let Ok(raw) = std::env::var(env_name) {
        let value = raw.parse::<T>().map_err(|e| ConfigError::Env {
            name: env_name.to_string(),
            message: format!("{e}"),
        })?;
        return Ok(Some(value));
    }
    Ok(flag.or(file))
}
