use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use once_cell::sync::OnceCell;
use parking_lot::Mutex;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::grid::{patch_grid, Location, Rect};
use super::{BoundaryPolicy, SaliencyConfig, SaliencyError};
use crate::encoder::Encoder;
use crate::image::Image;
use crate::simcore::{z_all, DefinitionMatrix};
use crate::store::{CacheDir, EmbeddingTable, PATCH_MAGIC};

const LOCATIONS_PER_BATCH: usize = 32;

/// Small- and large-patch embeddings for every grid location of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings {
    pub width: u32,
    pub height: u32,
    pub locations: Vec<Location>,
    pub dim: usize,
    small: Vec<f32>,
    large: Vec<f32>,
}

impl PatchEmbeddings {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn small(&self, i: usize) -> &[f32] {
        &self.small[i * self.dim..(i + 1) * self.dim]
    }

    pub fn large(&self, i: usize) -> &[f32] {
        &self.large[i * self.dim..(i + 1) * self.dim]
    }

    /// Component-wise mean of the two patch embeddings, not renormalised.
    /// Exact: the sum of two `f32` is representable in `f64`.
    pub fn local(&self, i: usize) -> Vec<f64> {
        mean(self.small(i), self.large(i))
    }

    fn to_table(&self, model_id: &str, key: [u8; 32]) -> EmbeddingTable {
        let n = self.locations.len();
        let mut ids = Vec::with_capacity(2 * n);
        ids.extend(self.locations.iter().map(|l| format!("S:{},{}", l.x, l.y)));
        ids.extend(self.locations.iter().map(|l| format!("L:{},{}", l.x, l.y)));
        let mut values = self.small.clone();
        values.extend_from_slice(&self.large);
        EmbeddingTable {
            magic: PATCH_MAGIC,
            model_id: model_id.to_owned(),
            key_hash: key,
            ids,
            dim: self.dim,
            values,
        }
    }

    fn from_table(
        table: EmbeddingTable,
        width: u32,
        height: u32,
        locations: Vec<Location>,
    ) -> Option<Self> {
        let n = locations.len();
        if table.magic != PATCH_MAGIC || table.ids.len() != 2 * n {
            return None;
        }
        let ids_match = locations.iter().enumerate().all(|(i, l)| {
            table.ids[i] == format!("S:{},{}", l.x, l.y)
                && table.ids[n + i] == format!("L:{},{}", l.x, l.y)
        });
        if !ids_match {
            return None;
        }
        let split = n * table.dim;
        let mut small = table.values;
        let large = small.split_off(split);
        Some(Self {
            width,
            height,
            locations,
            dim: table.dim,
            small,
            large,
        })
    }
}

pub(crate) fn mean(a: &[f32], b: &[f32]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&s, &l)| (s as f64 + l as f64) / 2.0)
        .collect()
}

fn crop(image: &Image, r: Rect) -> Result<Image, SaliencyError> {
    Ok(image.crop(r.x, r.y, r.w, r.h)?)
}

/// Encodes both patches of every grid location. Exactly two image
/// encodings per location.
pub fn encode_patches(
    image: &Image,
    cfg: &SaliencyConfig,
    encoder: &dyn Encoder,
) -> Result<PatchEmbeddings, SaliencyError> {
    let locations = patch_grid(image.width(), image.height(), cfg)?;
    let dim = encoder.dimension();
    let chunks: Vec<(Vec<f32>, Vec<f32>)> = locations
        .par_chunks(LOCATIONS_PER_BATCH)
        .map(|chunk| -> Result<_, SaliencyError> {
            let mut crops = Vec::with_capacity(2 * chunk.len());
            for l in chunk {
                crops.push(crop(image, l.small)?);
            }
            for l in chunk {
                crops.push(crop(image, l.large)?);
            }
            let embs = encoder.embed_image_batch(&crops)?;
            let mut small = Vec::with_capacity(chunk.len() * dim);
            let mut large = Vec::with_capacity(chunk.len() * dim);
            for (k, e) in embs.iter().enumerate() {
                if e.dim() != dim {
                    return Err(SaliencyError::Dimension {
                        expected: dim,
                        got: e.dim(),
                    });
                }
                if k < chunk.len() {
                    small.extend_from_slice(e.as_slice());
                } else {
                    large.extend_from_slice(e.as_slice());
                }
            }
            Ok((small, large))
        })
        .collect::<Result<_, _>>()?;
    let mut small = Vec::with_capacity(locations.len() * dim);
    let mut large = Vec::with_capacity(locations.len() * dim);
    for (s, l) in chunks {
        small.extend(s);
        large.extend(l);
    }
    Ok(PatchEmbeddings {
        width: image.width(),
        height: image.height(),
        locations,
        dim,
        small,
        large,
    })
}

/// Mean patch embedding at grid origin `(x, y)`.
pub fn local_embedding(
    image: &Image,
    x: u32,
    y: u32,
    cfg: &SaliencyConfig,
    encoder: &dyn Encoder,
) -> Result<Vec<f64>, SaliencyError> {
    let loc = patch_grid(image.width(), image.height(), cfg)?
        .into_iter()
        .find(|l| l.x == x && l.y == y)
        .ok_or(SaliencyError::NotAGridLocation { x, y })?;
    let embs = encoder.embed_image_batch(&[crop(image, loc.small)?, crop(image, loc.large)?])?;
    Ok(mean(embs[0].as_slice(), embs[1].as_slice()))
}

/// Cache key for patch embeddings: everything that changes the crops or
/// the encoder output.
pub fn patch_key(image: &Image, cfg: &SaliencyConfig, model_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"convis-patches-v1");
    h.update(image.content_hash());
    h.update(cfg.delta_s.to_le_bytes());
    h.update(cfg.delta_l.to_le_bytes());
    h.update(cfg.omega.to_le_bytes());
    h.update([match cfg.boundary_policy {
        BoundaryPolicy::FitOnly => 0u8,
        BoundaryPolicy::Clamp => 1u8,
    }]);
    h.update(model_id.as_bytes());
    h.finalize().into()
}

/// Per-location `z` against every definition row, plus a sorted copy for
/// counting how many rows score below a value.
#[derive(Debug)]
pub struct PatchScores {
    rows: usize,
    z: Vec<f64>,
    sorted: Vec<f64>,
}

impl PatchScores {
    pub fn compute(patches: &PatchEmbeddings, defmat: &DefinitionMatrix) -> Result<Self, SaliencyError> {
        let rows = defmat.len();
        let per_loc: Vec<Vec<f64>> = (0..patches.len())
            .into_par_iter()
            .map(|i| z_all(&patches.local(i), defmat))
            .collect::<Result<_, _>>()?;
        let mut z = Vec::with_capacity(rows * per_loc.len());
        for v in &per_loc {
            z.extend_from_slice(v);
        }
        let mut sorted = z.clone();
        sorted
            .par_chunks_mut(rows.max(1))
            .for_each(|c| c.sort_unstable_by(f64::total_cmp));
        Ok(Self { rows, z, sorted })
    }

    pub fn locations(&self) -> usize {
        self.z.len() / self.rows.max(1)
    }

    pub fn z(&self, loc: usize) -> &[f64] {
        &self.z[loc * self.rows..(loc + 1) * self.rows]
    }

    /// Number of rows whose `z` at `loc` is strictly below the best `z`
    /// among `concept_rows`.
    pub fn max_rank_below(&self, loc: usize, concept_rows: &[usize]) -> u32 {
        let z = self.z(loc);
        let best = concept_rows
            .iter()
            .map(|&r| z[r])
            .fold(f64::NEG_INFINITY, f64::max);
        let sorted = &self.sorted[loc * self.rows..(loc + 1) * self.rows];
        sorted.partition_point(|&v| v < best) as u32
    }
}

type Slot<T> = Arc<OnceCell<Arc<T>>>;

/// Bounded map where concurrent misses on one key share a single
/// computation.
struct Coalescing<K, T> {
    slots: Mutex<(HashMap<K, Slot<T>>, VecDeque<K>)>,
    capacity: usize,
}

impl<K: std::hash::Hash + Eq + Clone, T> Coalescing<K, T> {
    fn new(capacity: usize) -> Self {
        Self {
            slots: Mutex::new((HashMap::new(), VecDeque::new())),
            capacity: capacity.max(1),
        }
    }

    fn slot(&self, key: &K) -> Slot<T> {
        let mut guard = self.slots.lock();
        let (map, order) = &mut *guard;
        if let Some(s) = map.get(key) {
            return s.clone();
        }
        while map.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    map.remove(&old);
                }
                None => break,
            }
        }
        let s: Slot<T> = Arc::new(OnceCell::new());
        map.insert(key.clone(), s.clone());
        order.push_back(key.clone());
        s
    }

    /// Returns the value and whether it was already present.
    fn get_or_try_init<E>(
        &self,
        key: &K,
        init: impl FnOnce() -> Result<T, E>,
    ) -> Result<(Arc<T>, bool), E> {
        let slot = self.slot(key);
        let mut computed = false;
        let v = slot.get_or_try_init(|| {
            computed = true;
            init().map(Arc::new)
        })?;
        Ok((v.clone(), !computed))
    }
}

/// Patch-embedding cache: in memory, optionally backed by a cache
/// directory. Concurrent requests for the same image and configuration
/// trigger one encoding pass.
pub struct PatchCache {
    disk: Option<CacheDir>,
    embeddings: Coalescing<[u8; 32], PatchEmbeddings>,
    scores: Coalescing<([u8; 32], [u8; 32], String), PatchScores>,
}

impl PatchCache {
    pub fn in_memory() -> Self {
        Self::new(None)
    }

    pub fn new(disk: Option<CacheDir>) -> Self {
        Self {
            disk,
            embeddings: Coalescing::new(64),
            scores: Coalescing::new(4),
        }
    }

    /// Patch embeddings for `image`; the flag is true when no encoder call
    /// was made.
    pub fn embeddings(
        &self,
        image: &Image,
        cfg: &SaliencyConfig,
        encoder: &dyn Encoder,
    ) -> Result<(Arc<PatchEmbeddings>, bool), SaliencyError> {
        let key = patch_key(image, cfg, encoder.model_id());
        let mut from_disk = false;
        let (emb, hit) = self.embeddings.get_or_try_init(&key, || {
            if let Some(found) = self.read_disk(&key, image, cfg, encoder) {
                from_disk = true;
                return Ok(found);
            }
            let fresh = encode_patches(image, cfg, encoder)?;
            if let Some(dir) = &self.disk {
                let path = dir.patch_path(&key);
                if let Err(e) = fresh.to_table(encoder.model_id(), key).write(&path) {
                    log::warn!("could not persist patch cache {}: {e}", path.display());
                }
            }
            Ok::<_, SaliencyError>(fresh)
        })?;
        Ok((emb, hit || from_disk))
    }

    fn read_disk(
        &self,
        key: &[u8; 32],
        image: &Image,
        cfg: &SaliencyConfig,
        encoder: &dyn Encoder,
    ) -> Option<PatchEmbeddings> {
        let path = self.disk.as_ref()?.patch_path(key);
        if !path.exists() {
            return None;
        }
        let table = match EmbeddingTable::read(&path) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("unreadable patch cache {}: {e}", path.display());
                return None;
            }
        };
        if table.model_id != encoder.model_id() || table.key_hash != *key || table.dim != encoder.dimension() {
            return None;
        }
        let locations = patch_grid(image.width(), image.height(), cfg).ok()?;
        PatchEmbeddings::from_table(table, image.width(), image.height(), locations)
    }

    /// `z` tables for `image` against `defmat`, computed once per image.
    pub fn scores(
        &self,
        image: &Image,
        cfg: &SaliencyConfig,
        encoder: &dyn Encoder,
        defmat: &DefinitionMatrix,
    ) -> Result<(Arc<PatchEmbeddings>, Arc<PatchScores>, bool), SaliencyError> {
        let (emb, hit) = self.embeddings(image, cfg, encoder)?;
        let key = (
            patch_key(image, cfg, encoder.model_id()),
            *defmat.hierarchy_hash(),
            defmat.model_id().to_owned(),
        );
        let (scores, _) = self
            .scores
            .get_or_try_init(&key, || PatchScores::compute(&emb, defmat))?;
        Ok((emb, scores, hit))
    }
}

impl Default for PatchCache {
    fn default() -> Self {
        Self::in_memory()
    }
}
