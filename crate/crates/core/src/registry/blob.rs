//! Content-addressed chunk store.
//!
//! Layout under the store root:
//!
//! ```text
//! blobs/<first2 hex>/<chunk digest>          raw chunk bytes
//! blobs/<first2 hex>/<blob digest>.chunks    JSON list of the blob's chunk digests
//! ```
//!
//! A blob no larger than one chunk is its own single chunk, so its chunk file
//! and its chunk table share the same digest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::RegistryError;
use crate::digest::Digest;

pub const CHUNK_SIZE: usize = 4 * 1024 * 1024;

#[derive(Debug)]
pub struct BlobStore {
    dir: PathBuf,
    chunk_size: usize,
    quota_bytes: Option<u64>,
    used_bytes: Mutex<u64>,
}

impl BlobStore {
    pub fn open(dir: impl Into<PathBuf>, quota_bytes: Option<u64>) -> Result<Self, RegistryError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut used = 0;
        for fan in fs::read_dir(&dir)? {
            let fan = fan?;
            if !fan.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(fan.path())? {
                let f = f?;
                if f.path().extension().is_none() {
                    used += f.metadata()?.len();
                }
            }
        }
        Ok(Self { dir, chunk_size: CHUNK_SIZE, quota_bytes, used_bytes: Mutex::new(used) })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    fn chunk_path(&self, d: &Digest) -> PathBuf {
        self.dir.join(d.prefix()).join(d.to_hex())
    }

    fn table_path(&self, d: &Digest) -> PathBuf {
        self.dir.join(d.prefix()).join(format!("{}.chunks", d.to_hex()))
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.table_path(d).is_file()
    }

    /// Store `bytes`, returning their digest. Identical content is stored once.
    pub fn put(&self, bytes: &[u8]) -> Result<Digest, RegistryError> {
        let digest = Digest::of(bytes);
        if self.contains(&digest) {
            return Ok(digest);
        }
        let chunks: Vec<&[u8]> = if bytes.is_empty() {
            vec![bytes]
        } else {
            bytes.chunks(self.chunk_size).collect()
        };
        let chunk_digests: Vec<Digest> = if chunks.len() == 1 {
            vec![digest]
        } else {
            chunks.iter().map(|c| Digest::of(c)).collect()
        };

        let mut used = self.used_bytes.lock().expect("blob quota lock");
        let fresh: u64 = chunks
            .iter()
            .zip(&chunk_digests)
            .filter(|(_, d)| !self.chunk_path(d).is_file())
            .map(|(c, _)| c.len() as u64)
            .sum();
        if let Some(quota) = self.quota_bytes {
            if *used + fresh > quota {
                return Err(RegistryError::StorageFull {
                    needed: fresh,
                    available: quota.saturating_sub(*used),
                });
            }
        }
        for (chunk, d) in chunks.iter().zip(&chunk_digests) {
            let path = self.chunk_path(d);
            if !path.is_file() {
                write_atomic(&path, chunk)?;
            }
        }
        let table: Vec<String> = chunk_digests.iter().map(Digest::to_hex).collect();
        write_atomic(
            &self.table_path(&digest),
            serde_json::to_string(&table).expect("string list").as_bytes(),
        )?;
        *used += fresh;
        Ok(digest)
    }

    /// Reassemble a blob. Fails with `IntegrityError` if the bytes on disk no
    /// longer hash to `digest`.
    pub fn get(&self, digest: &Digest) -> Result<Vec<u8>, RegistryError> {
        let table = match fs::read(self.table_path(digest)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(RegistryError::BlobNotFound(*digest));
            }
            Err(e) => return Err(e.into()),
        };
        let integrity = |detail: String| RegistryError::IntegrityError { digest: *digest, detail };
        let table: Vec<String> = serde_json::from_slice(&table)
            .map_err(|e| integrity(format!("unreadable chunk table: {e}")))?;
        let mut out = Vec::new();
        for hex in &table {
            let d: Digest = hex.parse().map_err(|_| integrity(format!("bad chunk id {hex}")))?;
            match fs::read(self.chunk_path(&d)) {
                Ok(bytes) => out.extend_from_slice(&bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    return Err(integrity(format!("missing chunk {hex}")));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let actual = Digest::of(&out);
        if actual != *digest {
            return Err(integrity(format!("content hashes to {actual}")));
        }
        Ok(out)
    }

    /// Size in bytes without reassembling the content.
    pub fn size_of(&self, digest: &Digest) -> Result<u64, RegistryError> {
        let table = fs::read(self.table_path(digest)).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => RegistryError::BlobNotFound(*digest),
            _ => e.into(),
        })?;
        let table: Vec<String> = serde_json::from_slice(&table).map_err(|e| {
            RegistryError::IntegrityError { digest: *digest, detail: e.to_string() }
        })?;
        let mut size = 0;
        for hex in table {
            size += fs::metadata(self.dir.join(&hex[..2]).join(&hex))?.len();
        }
        Ok(size)
    }

    /// Number of distinct blobs stored.
    pub fn blob_count(&self) -> Result<usize, RegistryError> {
        let mut n = 0;
        for fan in fs::read_dir(&self.dir)? {
            let fan = fan?;
            if fan.file_type()?.is_dir() {
                for f in fs::read_dir(fan.path())? {
                    if f?.path().extension().is_some_and(|e| e == "chunks") {
                        n += 1;
                    }
                }
            }
        }
        Ok(n)
    }

    /// Path of every chunk file belonging to `digest`, in order.
    pub fn chunk_files(&self, digest: &Digest) -> Result<Vec<PathBuf>, RegistryError> {
        let table: Vec<String> = serde_json::from_slice(&fs::read(self.table_path(digest))?)
            .map_err(|e| RegistryError::IntegrityError { digest: *digest, detail: e.to_string() })?;
        Ok(table.iter().map(|h| self.dir.join(&h[..2]).join(h)).collect())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile_in(dir)?;
    tmp.1.write_all(bytes)?;
    tmp.1.sync_all()?;
    drop(tmp.1);
    fs::rename(&tmp.0, path)
}

fn tempfile_in(dir: &Path) -> io::Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static SEQ: AtomicU64 = AtomicU64::new(0);
    loop {
        let n = SEQ.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}
