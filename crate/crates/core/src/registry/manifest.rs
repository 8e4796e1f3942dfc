use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::canonical::canonical_digest;
use crate::clock::TimestampMs;
use crate::digest::Digest;

/// `[a-z0-9][a-z0-9._-]{0,63}`
pub fn is_valid_name(name: &str) -> bool {
    let b = name.as_bytes();
    !b.is_empty()
        && b.len() <= 64
        && matches!(b[0], b'a'..=b'z' | b'0'..=b'9')
        && b[1..].iter().all(|c| matches!(c, b'a'..=b'z' | b'0'..=b'9' | b'.' | b'_' | b'-'))
}

/// A (name, version) pair naming exactly one manifest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub name: String,
    pub version: u32,
}

impl ModelRef {
    pub fn new(name: impl Into<String>, version: u32) -> Self {
        Self { name: name.into(), version }
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

impl FromStr for ModelRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, v) = s.split_once('@').ok_or_else(|| format!("expected name@version, got {s:?}"))?;
        let version = v.parse().map_err(|_| format!("bad version in {s:?}"))?;
        Ok(Self::new(name, version))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionSelector {
    Latest,
    Exact(u32),
}

impl FromStr for VersionSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("latest") {
            return Ok(Self::Latest);
        }
        match s.parse::<u32>() {
            Ok(v) if v > 0 => Ok(Self::Exact(v)),
            _ => Err(format!("version must be a positive integer or LATEST, got {s:?}")),
        }
    }
}

/// Pinned dependency list with a digest over its canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub dependencies: Vec<(String, String)>,
    pub lock_digest: Digest,
}

impl EnvironmentSpec {
    /// Sorts by package name; a package listed twice is an error.
    pub fn new(mut dependencies: Vec<(String, String)>) -> Result<Self, RegistryError> {
        dependencies.sort();
        if let Some(w) = dependencies.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(RegistryError::InvalidManifest(format!(
                "dependency {} listed more than once",
                w[0].0
            )));
        }
        if let Some((p, _)) = dependencies.iter().find(|(p, v)| p.is_empty() || v.is_empty()) {
            return Err(RegistryError::InvalidManifest(format!("dependency {p:?} needs a name and version")));
        }
        let lock_digest = Self::lock_of(&dependencies);
        Ok(Self { dependencies, lock_digest })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new()).expect("empty dependency list is valid")
    }

    fn lock_of(deps: &[(String, String)]) -> Digest {
        canonical_digest(deps)
    }

    /// Sorted, duplicate-free, and the lock digest recomputes.
    pub fn verify(&self) -> bool {
        self.dependencies.windows(2).all(|w| w[0].0 < w[1].0)
            && Self::lock_of(&self.dependencies) == self.lock_digest
    }
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self::empty()
    }
}

/// Everything about a model the uploader chooses. The registry fills in
/// version, digest, size and creation time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    #[serde(default)]
    pub capabilities: BTreeMap<String, f64>,
    #[serde(default)]
    pub cost_per_call: u64,
    pub latency_ms: u64,
    pub designer_account: String,
    #[serde(default)]
    pub env: EnvironmentSpec,
    #[serde(default)]
    pub changelog: String,
    /// Allows an empty artifact.
    #[serde(default)]
    pub metadata_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub name: String,
    pub version: u32,
    pub blob_hash: Digest,
    pub size_bytes: u64,
    pub capabilities: BTreeMap<String, f64>,
    pub cost_per_call: u64,
    pub latency_ms: u64,
    pub designer_account: String,
    pub env: EnvironmentSpec,
    pub created_at: TimestampMs,
    pub changelog: String,
}

impl ModelManifest {
    pub fn model_ref(&self) -> ModelRef {
        ModelRef::new(self.name.clone(), self.version)
    }

    /// A manifest that is not backed by a stored artifact, for planning over
    /// hypothetical pools.
    pub fn synthetic(name: &str, version: u32, caps: &[(&str, f64)], cost_per_call: u64, latency_ms: u64) -> Self {
        ModelManifest {
            name: name.to_string(),
            version,
            blob_hash: Digest::of(b""),
            size_bytes: 0,
            capabilities: caps.iter().map(|(t, s)| (t.to_string(), *s)).collect(),
            cost_per_call,
            latency_ms,
            designer_account: String::new(),
            env: EnvironmentSpec::empty(),
            created_at: 0,
            changelog: String::new(),
        }
    }

    /// Capability for `tag`; tags a model does not list score 0.
    pub fn capability(&self, tag: &str) -> f64 {
        self.capabilities.get(tag).copied().unwrap_or(0.0)
    }

    /// Text fed to the search index.
    pub(crate) fn search_text(&self) -> String {
        let tags: Vec<&str> = self.capabilities.keys().map(String::as_str).collect();
        format!("{} {} {}", self.name, tags.join(" "), self.changelog)
    }
}

pub(crate) fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Validate and normalize uploader-supplied metadata.
pub(crate) fn check_meta(name: &str, meta: &ModelMeta) -> Result<BTreeMap<String, f64>, RegistryError> {
    if !is_valid_name(name) {
        return Err(RegistryError::InvalidName(name.to_string()));
    }
    let mut caps = BTreeMap::new();
    for (tag, &score) in &meta.capabilities {
        if tag.is_empty() || !(0.0..=1.0).contains(&score) {
            return Err(RegistryError::InvalidCapability(tag.clone()));
        }
        caps.insert(tag.clone(), round4(score));
    }
    if meta.latency_ms == 0 {
        return Err(RegistryError::InvalidManifest("latency_ms must be positive".into()));
    }
    if meta.designer_account.is_empty() {
        return Err(RegistryError::InvalidManifest("designer_account is required".into()));
    }
    if !meta.env.verify() {
        return Err(RegistryError::InvalidManifest("env.lock_digest does not match dependencies".into()));
    }
    Ok(caps)
}
