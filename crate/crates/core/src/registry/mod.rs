//! Versioned, content-addressed model registry.
//!
//! Artifacts live in a [`BlobStore`]; every upload gets a manifest at
//! `manifests/<name>/<version>.json`. Versions per name are dense from 1 and
//! never rewritten: a rollback copies an old version forward as a new one.

mod blob;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

pub use blob::{BlobStore, CHUNK_SIZE};
pub use manifest::{
    is_valid_name, EnvironmentSpec, ModelManifest, ModelMeta, ModelRef, VersionSelector,
};

use crate::canonical::to_canonical_string;
use crate::clock::{Clock, SystemClock, TimestampMs};
use crate::digest::Digest;
use crate::text::{token_set, InvertedIndex};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid model name {0:?}")]
    InvalidName(String),
    #[error("capability {0:?} must be a score in [0, 1]")]
    InvalidCapability(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("empty artifact; set metadata_only to publish a model without weights")]
    EmptyBlob,
    #[error("storage full: need {needed} bytes, {available} available")]
    StorageFull { needed: u64, available: u64 },
    #[error("model {name} not found")]
    NotFound { name: String, version: Option<u32> },
    #[error("blob {0} not found")]
    BlobNotFound(Digest),
    #[error("integrity check failed for blob {digest}: {detail}")]
    IntegrityError { digest: Digest, detail: String },
    #[error("{name} is already at version {version}")]
    RollbackToSelf { name: String, version: u32 },
    #[error("corrupt registry state: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RegistryError {
    fn not_found(name: &str, version: Option<u32>) -> Self {
        Self::NotFound { name: name.to_string(), version }
    }
}

#[derive(Default)]
struct Index {
    models: BTreeMap<String, Vec<ModelManifest>>,
    search: InvertedIndex<(String, u32)>,
}

impl Index {
    fn insert(&mut self, m: ModelManifest) {
        let key = (m.name.clone(), m.version);
        self.search.insert(&key, &token_set(&m.search_text()));
        self.models.entry(m.name.clone()).or_default().push(m);
    }
}

pub struct Registry {
    manifests_dir: PathBuf,
    blobs: BlobStore,
    index: RwLock<Index>,
    name_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    clock: Arc<dyn Clock>,
}

impl Registry {
    /// Open (or create) a registry rooted at `root`, i.e. the `store/` directory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::open_with(root, None, Arc::new(SystemClock))
    }

    pub fn open_with(
        root: impl AsRef<Path>,
        quota_bytes: Option<u64>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, RegistryError> {
        let root = root.as_ref();
        let blobs = BlobStore::open(root.join("blobs"), quota_bytes)?;
        let manifests_dir = root.join("manifests");
        fs::create_dir_all(&manifests_dir)?;
        let mut index = Index::default();
        let mut names: Vec<_> = fs::read_dir(&manifests_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let mut versions = Vec::new();
            for f in fs::read_dir(manifests_dir.join(&name))? {
                let path = f?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let m: ModelManifest = serde_json::from_slice(&fs::read(&path)?)
                        .map_err(|e| RegistryError::Corrupt(format!("{}: {e}", path.display())))?;
                    versions.push(m);
                }
            }
            versions.sort_by_key(|m| m.version);
            for (i, m) in versions.iter().enumerate() {
                if m.version as usize != i + 1 || m.name != name {
                    return Err(RegistryError::Corrupt(format!("{name}: version sequence has a gap at {}", i + 1)));
                }
                if !m.env.verify() {
                    return Err(RegistryError::Corrupt(format!("{name}@{}: lock digest mismatch", m.version)));
                }
            }
            for m in versions {
                index.insert(m);
            }
        }
        Ok(Self {
            manifests_dir,
            blobs,
            index: RwLock::new(index),
            name_locks: Mutex::new(HashMap::new()),
            clock,
        })
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    fn lock_name(&self, name: &str) -> Arc<Mutex<()>> {
        let mut locks = self.name_locks.lock().expect("name lock table");
        locks.entry(name.to_string()).or_default().clone()
    }

    /// Store `blob` and publish it as the next version of `name`.
    pub fn put_model(&self, name: &str, blob: &[u8], meta: ModelMeta) -> Result<ModelManifest, RegistryError> {
        manifest::check_meta(name, &meta)?;
        if blob.is_empty() && !meta.metadata_only {
            return Err(RegistryError::EmptyBlob);
        }
        let digest = self.blobs.put(blob)?;
        self.publish(name, digest, meta)
    }

    /// Publish a manifest for a blob that is already in the store.
    pub fn publish(&self, name: &str, blob_hash: Digest, meta: ModelMeta) -> Result<ModelManifest, RegistryError> {
        let capabilities = manifest::check_meta(name, &meta)?;
        let size_bytes = self.blobs.size_of(&blob_hash)?;
        if size_bytes == 0 && !meta.metadata_only {
            return Err(RegistryError::EmptyBlob);
        }
        let lock = self.lock_name(name);
        let _guard = lock.lock().expect("per-name write lock");
        let version = self.latest_version(name).unwrap_or(0) + 1;
        let m = ModelManifest {
            name: name.to_string(),
            version,
            blob_hash,
            size_bytes,
            capabilities,
            cost_per_call: meta.cost_per_call,
            latency_ms: meta.latency_ms,
            designer_account: meta.designer_account,
            env: meta.env,
            created_at: self.clock.now_ms(),
            changelog: meta.changelog,
        };
        self.persist(&m)?;
        Ok(m)
    }

    fn persist(&self, m: &ModelManifest) -> Result<(), RegistryError> {
        let path = self.manifests_dir.join(&m.name).join(format!("{}.json", m.version));
        if path.exists() {
            return Err(RegistryError::Corrupt(format!("{} already exists", path.display())));
        }
        blob::write_atomic(&path, to_canonical_string(m).as_bytes())?;
        self.index.write().expect("registry index").insert(m.clone());
        Ok(())
    }

    fn latest_version(&self, name: &str) -> Option<u32> {
        let idx = self.index.read().expect("registry index");
        idx.models.get(name).and_then(|v| v.last()).map(|m| m.version)
    }

    pub fn manifest(&self, name: &str, sel: VersionSelector) -> Result<ModelManifest, RegistryError> {
        let idx = self.index.read().expect("registry index");
        let versions = idx.models.get(name).ok_or_else(|| RegistryError::not_found(name, None))?;
        match sel {
            VersionSelector::Latest => versions.last().cloned().ok_or_else(|| RegistryError::not_found(name, None)),
            VersionSelector::Exact(v) => versions
                .get((v as usize).wrapping_sub(1))
                .cloned()
                .ok_or_else(|| RegistryError::not_found(name, Some(v))),
        }
    }

    /// The manifest and its verified artifact bytes.
    pub fn get_model(&self, name: &str, sel: VersionSelector) -> Result<(ModelManifest, Vec<u8>), RegistryError> {
        let m = self.manifest(name, sel)?;
        let bytes = self.blobs.get(&m.blob_hash)?;
        Ok((m, bytes))
    }

    pub fn list_versions(&self, name: &str) -> Result<Vec<(u32, TimestampMs, String)>, RegistryError> {
        let idx = self.index.read().expect("registry index");
        let versions = idx.models.get(name).ok_or_else(|| RegistryError::not_found(name, None))?;
        Ok(versions.iter().map(|m| (m.version, m.created_at, m.changelog.clone())).collect())
    }

    /// Copy `target` forward as a new version.
    pub fn rollback(&self, name: &str, target: u32) -> Result<ModelManifest, RegistryError> {
        let lock = self.lock_name(name);
        let _guard = lock.lock().expect("per-name write lock");
        let old = self.manifest(name, VersionSelector::Exact(target))?;
        let latest = self.latest_version(name).expect("name exists");
        if latest == target {
            return Err(RegistryError::RollbackToSelf { name: name.to_string(), version: target });
        }
        let m = ModelManifest {
            version: latest + 1,
            created_at: self.clock.now_ms(),
            changelog: format!("rollback to {target}"),
            ..old
        };
        self.persist(&m)?;
        Ok(m)
    }

    /// Rank every stored version by how many distinct query tokens appear in
    /// its name, capability tags and changelog.
    pub fn search_models(&self, query: &str, limit: usize) -> Vec<ModelManifest> {
        let q = token_set(query);
        if q.is_empty() || limit == 0 {
            return Vec::new();
        }
        let idx = self.index.read().expect("registry index");
        let mut scored: Vec<(usize, String, u32)> = idx
            .search
            .overlap_counts(&q)
            .into_iter()
            .map(|((name, v), score)| (score, name, v))
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(b.2.cmp(&a.2)));
        scored
            .into_iter()
            .take(limit)
            .map(|(_, name, v)| idx.models[&name][v as usize - 1].clone())
            .collect()
    }

    /// Latest version of every model, ordered by name.
    pub fn latest_models(&self) -> Vec<ModelManifest> {
        let idx = self.index.read().expect("registry index");
        idx.models.values().filter_map(|v| v.last().cloned()).collect()
    }

    pub fn model_names(&self) -> Vec<String> {
        self.index.read().expect("registry index").models.keys().cloned().collect()
    }
}
