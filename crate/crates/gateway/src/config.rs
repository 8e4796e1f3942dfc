use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use imo_core::pathfinder::PlannerWeights;

pub const DEFAULT_MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Settings for `imo serve`, read from a TOML file.
///
/// ```toml
/// data_dir = "/var/lib/imo"
/// bind = "127.0.0.1:7070"
/// tokens = ["s3cret"]
/// lexicon = "lexicon.txt"
///
/// [planner]
/// beam_width = 16
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub data_dir: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Bearer tokens accepted on every non-GET request.
    #[serde(default)]
    pub tokens: Vec<String>,
    #[serde(default = "default_cache_capacity")]
    pub cache_capacity: usize,
    /// Lifetime of cached plans; unset keeps them until evicted.
    #[serde(default)]
    pub cache_ttl_ms: Option<u64>,
    #[serde(default)]
    pub planner: PlannerWeights,
    #[serde(default = "default_treasury")]
    pub treasury: String,
    /// Paid from the treasury for each record-breaking plan.
    #[serde(default)]
    pub breakthrough_reward: u64,
    /// `keyword = tag` lines for the request interpreter.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub storage_quota_bytes: Option<u64>,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 7070))
}

fn default_cache_capacity() -> usize {
    1024
}

fn default_treasury() -> String {
    "treasury".into()
}

fn default_max_body() -> usize {
    DEFAULT_MAX_BODY_BYTES
}

impl ServeConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            bind: default_bind(),
            tokens: Vec::new(),
            cache_capacity: default_cache_capacity(),
            cache_ttl_ms: None,
            planner: PlannerWeights::default(),
            treasury: default_treasury(),
            breakthrough_reward: 0,
            lexicon: None,
            storage_quota_bytes: None,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }

    /// Relative paths inside the file resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c: ServeConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if c.data_dir.is_relative() {
            c.data_dir = base.join(&c.data_dir);
        }
        if let Some(l) = &c.lexicon {
            if l.is_relative() {
                c.lexicon = Some(base.join(l));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cache_capacity == 0 {
            return Err(ConfigError::Invalid("cache_capacity must be positive".into()));
        }
        if self.cache_ttl_ms == Some(0) {
            return Err(ConfigError::Invalid("cache_ttl_ms must be positive".into()));
        }
        if self.tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(ConfigError::Invalid("tokens must be non-empty and contain no whitespace".into()));
        }
        if self.max_body_bytes == 0 {
            return Err(ConfigError::Invalid("max_body_bytes must be positive".into()));
        }
        self.planner.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
