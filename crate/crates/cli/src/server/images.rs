//! Content-addressed image store: `{id}.png` plus `{id}.json` per image.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use convis_core::Image;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// SHA-256 of the decoded pixels.
    pub id: String,
    pub filename: Option<String>,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    /// Seconds since the Unix epoch.
    pub uploaded_at: u64,
}

struct Entry {
    record: ImageRecord,
    image: Option<Arc<Image>>,
}

pub struct ImageStore {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<String, Entry>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("storage failure: {0}")]
    Io(String),
}

impl ImageStore {
    /// Opens a store; with a directory, previously stored records are
    /// indexed and pixels are read back on demand.
    pub fn open(dir: Option<PathBuf>) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
            for item in std::fs::read_dir(d)? {
                let path = item?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    match std::fs::read(&path).map(|b| serde_json::from_slice::<ImageRecord>(&b)) {
                        Ok(Ok(record)) => {
                            entries.insert(record.id.clone(), Entry { record, image: None });
                        }
                        _ => log::warn!("skipping unreadable record {}", path.display()),
                    }
                }
            }
        }
        Ok(Self {
            dir,
            entries: RwLock::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `bytes`; returns the record and whether it is new.
    pub fn insert(&self, bytes: &[u8], filename: Option<String>) -> Result<(ImageRecord, bool), StoreError> {
        let image = Image::decode(bytes).map_err(|e| StoreError::Decode(e.to_string()))?;
        let id = image.content_hash_hex();
        if let Some(e) = self.entries.read().get(&id) {
            return Ok((e.record.clone(), false));
        }
        let record = ImageRecord {
            id: id.clone(),
            filename,
            width: image.width(),
            height: image.height(),
            channels: image.channels(),
            uploaded_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Some(d) = &self.dir {
            image
                .save_png(d.join(format!("{id}.png")))
                .map_err(|e| StoreError::Io(e.to_string()))?;
            let json = serde_json::to_vec_pretty(&record).expect("record serializes");
            std::fs::write(d.join(format!("{id}.json")), json).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        let mut entries = self.entries.write();
        // a concurrent upload of the same bytes may have won
        let e = entries.entry(id).or_insert(Entry {
            record,
            image: Some(Arc::new(image)),
        });
        Ok((e.record.clone(), true))
    }

    pub fn record(&self, id: &str) -> Option<ImageRecord> {
        self.entries.read().get(id).map(|e| e.record.clone())
    }

    pub fn image(&self, id: &str) -> Option<Arc<Image>> {
        if let Some(img) = &self.entries.read().get(id)?.image {
            return Some(img.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{id}.png"));
        match Image::open(&path) {
            Ok(img) => Some(Arc::new(img)),
            Err(e) => {
                log::error!("stored image {} unreadable: {e}", path.display());
                None
            }
        }
    }
}
