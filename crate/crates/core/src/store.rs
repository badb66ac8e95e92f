//! Binary embedding tables and the on-disk cache directory.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes   ("CVDM" definitions, "CVPE" patch embeddings)
//! version    u16
//! rows       u32
//! dim        u32
//! model_len  u32, then model_len bytes of UTF-8 model id
//! key_hash   32 bytes
//! ids        rows x (u32 length + UTF-8 bytes)
//! values     rows x dim f32
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

pub const DEFINITION_MAGIC: [u8; 4] = *b"CVDM";
pub const PATCH_MAGIC: [u8; 4] = *b"CVPE";
pub const TABLE_VERSION: u16 = 1;
pub const CACHE_DIR_ENV: &str = "CONVIS_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported table version {0}")]
    Version(u16),
    #[error("truncated table")]
    Truncated,
    #[error("invalid utf-8 in table")]
    Utf8,
    #[error("{rows} rows x {dim} does not match {values} values")]
    Shape {
        rows: usize,
        dim: usize,
        values: usize,
    },
}

/// Row-labelled matrix of f32 embeddings tagged with the model and a key
/// digest describing what it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub magic: [u8; 4],
    pub model_id: String,
    pub key_hash: [u8; 32],
    pub ids: Vec<String>,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        if self.values.len() != self.ids.len() * self.dim {
            return Err(StoreError::Shape {
                rows: self.ids.len(),
                dim: self.dim,
                values: self.values.len(),
            });
        }
        let id_bytes: usize = self.ids.iter().map(|s| 4 + s.len()).sum();
        let mut out = Vec::with_capacity(50 + self.model_id.len() + id_bytes + self.values.len() * 4);
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.model_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.model_id.as_bytes());
        out.extend_from_slice(&self.key_hash);
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != DEFINITION_MAGIC && magic != PATCH_MAGIC {
            return Err(StoreError::Magic(magic));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != TABLE_VERSION {
            return Err(StoreError::Version(version));
        }
        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let model_len = r.u32()? as usize;
        let model_id = r.string(model_len)?;
        let key_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let mut ids = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            let len = r.u32()? as usize;
            ids.push(r.string(len)?);
        }
        let n = rows.checked_mul(dim).ok_or(StoreError::Truncated)?;
        let raw = r.take(n.checked_mul(4).ok_or(StoreError::Truncated)?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            magic,
            model_id,
            key_hash,
            ids,
            dim,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Writes via a temporary file and rename, so readers never observe a
    /// partial table.
    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let bytes = self.to_bytes()?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile_in(dir).map_err(io)?;
        tmp.1.write_all(&bytes).map_err(io)?;
        tmp.1.sync_all().map_err(io)?;
        drop(tmp.1);
        std::fs::rename(&tmp.0, path).map_err(io)
    }
}

fn tempfile_in(dir: &Path) -> std::io::Result<(PathBuf, std::fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
    let file = std::fs::File::create(&path)?;
    Ok((path, file))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).ok_or(StoreError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(StoreError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String, StoreError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| StoreError::Utf8)
    }
}

/// Root directory for cached tables.
#[derive(Debug, Clone)]
pub struct CacheDir {
    root: PathBuf,
}

impl CacheDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `CONVIS_CACHE_DIR` if set, else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(v) if !v.is_empty() => Self::new(PathBuf::from(v)),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn definition_path(&self, model_id: &str, hierarchy_hash: &[u8; 32]) -> PathBuf {
        self.root
            .join("definitions")
            .join(format!("{}-{}.cvdm", slug(model_id), hex::encode(&hierarchy_hash[..16])))
    }

    pub fn patch_path(&self, key_hash: &[u8; 32]) -> PathBuf {
        self.root
            .join("patches")
            .join(format!("{}.cvpe", hex::encode(key_hash)))
    }
}

fn slug(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(48)
        .collect();
    let digest = crate::encoder::fnv1a64(&[s.as_bytes()]);
    format!("{cleaned}-{digest:016x}")
}
