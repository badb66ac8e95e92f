//! Image-concept similarity.
//!
//! A concept (synset) is placed in the joint embedding space through the
//! text embedding of its definition. The raw score `z` is the cosine
//! between an image embedding and that definition embedding. Because raw
//! cosines drift with the visual richness of the input, scores are turned
//! into ranks: the rank similarity of a concept is the fraction of all
//! concepts in the hierarchy whose `z` is strictly lower. Concepts are
//! scored through their whole "is a" subtree by taking the best rank
//! among the concept and its descendants.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::encoder::{norm, Encoder, EncoderError};
use crate::lexdb::{Hierarchy, LexError};
use crate::store::{CacheDir, EmbeddingTable, StoreError, DEFINITION_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown synset {0}")]
    UnknownSynset(String),
    #[error("query vector has dimension {got}, matrix has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query vector is zero or non-finite")]
    DegenerateQuery,
    #[error("row {0} is not unit-norm")]
    NotUnitRow(String),
    #[error("duplicate synset id {0}")]
    DuplicateId(String),
    #[error("empty hierarchy")]
    EmptyHierarchy,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Lex(#[from] LexError),
}

/// Rank similarity `below / total`: the share of concepts scoring strictly
/// lower. Kept as a count so that comparisons and sums are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RankScore {
    below: u32,
    total: u32,
}

impl RankScore {
    pub fn new(below: u32, total: u32) -> Self {
        assert!(total > 0 && below < total, "rank {below}/{total} out of range");
        Self { below, total }
    }

    pub fn below(self) -> u32 {
        self.below
    }

    pub fn total(self) -> u32 {
        self.total
    }

    pub fn value(self) -> f64 {
        self.below as f64 / self.total as f64
    }
}

impl PartialOrd for RankScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RankScore {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.below as u64 * other.total as u64).cmp(&(other.below as u64 * self.total as u64))
    }
}

/// Definition embeddings for every node of a hierarchy, rows ordered by
/// synset id.
#[derive(Debug, Clone)]
pub struct DefinitionMatrix {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    values: Vec<f32>,
    norms: Vec<f64>,
    model_id: String,
    hierarchy_hash: [u8; 32],
}

impl DefinitionMatrix {
    /// Builds from `(id, vector)` rows. Rows are sorted by id and must be
    /// unit-norm within 1e-6.
    pub fn from_rows(
        mut rows: Vec<(String, Vec<f32>)>,
        model_id: impl Into<String>,
        hierarchy_hash: [u8; 32],
    ) -> Result<Self, SimError> {
        if rows.is_empty() {
            return Err(SimError::EmptyHierarchy);
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let dim = rows[0].1.len();
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(SimError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            ids.push(id);
            values.extend(v);
        }
        Self::assemble(ids, dim, values, model_id.into(), hierarchy_hash)
    }

    fn assemble(
        ids: Vec<String>,
        dim: usize,
        values: Vec<f32>,
        model_id: String,
        hierarchy_hash: [u8; 32],
    ) -> Result<Self, SimError> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(SimError::DuplicateId(id.clone()));
            }
        }
        let norms: Vec<f64> = values.chunks_exact(dim.max(1)).map(norm).collect();
        for (id, n) in ids.iter().zip(&norms) {
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                return Err(SimError::NotUnitRow(id.clone()));
            }
        }
        Ok(Self {
            ids,
            index,
            dim,
            values,
            norms,
            model_id,
            hierarchy_hash,
        })
    }

    fn from_table(table: EmbeddingTable) -> Result<Self, SimError> {
        Self::assemble(
            table.ids,
            table.dim,
            table.values,
            table.model_id,
            table.key_hash,
        )
    }

    pub fn to_table(&self) -> EmbeddingTable {
        EmbeddingTable {
            magic: DEFINITION_MAGIC,
            model_id: self.model_id.clone(),
            key_hash: self.hierarchy_hash,
            ids: self.ids.clone(),
            dim: self.dim,
            values: self.values.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn hierarchy_hash(&self) -> &[u8; 32] {
        &self.hierarchy_hash
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, SimError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| SimError::UnknownSynset(id.to_owned()))
    }

    /// Row indices of `id` and all of its descendants in `hier`.
    pub fn concept_rows(&self, hier: &Hierarchy, id: &str) -> Result<Vec<usize>, SimError> {
        let nodes = hier.nodes();
        hier.descendant_indices(id)?
            .into_iter()
            .map(|n| self.index_of(&nodes[n].id))
            .collect()
    }

    fn check_query<T: Query>(&self, x: &[T]) -> Result<f64, SimError> {
        if x.len() != self.dim {
            return Err(SimError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let nx = query_norm(x);
        if nx == 0.0 || !nx.is_finite() {
            return Err(SimError::DegenerateQuery);
        }
        Ok(nx)
    }
}

/// Element type of a query vector. Backend embeddings are `f32`; patch
/// means are kept in `f64`, where the average of two `f32` values is exact.
pub trait Query: Copy + Into<f64> + Send + Sync {}
impl Query for f32 {}
impl Query for f64 {}

fn query_norm<T: Query>(x: &[T]) -> f64 {
    x.iter().map(|&v| v.into() * v.into()).sum::<f64>().sqrt()
}

fn row_cosine<T: Query>(x: &[T], nx: f64, row: &[f32], nr: f64) -> f64 {
    let dot: f64 = x.iter().zip(row).map(|(&a, &b)| a.into() * b as f64).sum();
    (dot / (nx * nr)).clamp(-1.0, 1.0)
}

const ENCODE_CHUNK: usize = 256;

/// Embeds every definition of `hier`. With a cache directory, a table keyed
/// by (model id, hierarchy content hash) is reused when present and written
/// after a fresh build.
pub fn build_definition_matrix(
    hier: &Hierarchy,
    encoder: &dyn Encoder,
    cache: Option<&CacheDir>,
) -> Result<DefinitionMatrix, SimError> {
    if hier.is_empty() {
        return Err(SimError::EmptyHierarchy);
    }
    let hash = hier.content_hash();
    let path = cache.map(|c| c.definition_path(encoder.model_id(), &hash));
    if let Some(path) = path.as_deref().filter(|p| p.exists()) {
        match EmbeddingTable::read(path).map_err(SimError::from).and_then(DefinitionMatrix::from_table) {
            Ok(m)
                if m.model_id == encoder.model_id()
                    && m.hierarchy_hash == hash
                    && m.dim == encoder.dimension()
                    && m.ids.iter().map(String::as_str).eq(hier.nodes().iter().map(|s| s.id.as_str())) =>
            {
                return Ok(m)
            }
            Ok(_) => log::warn!("stale definition cache {}, rebuilding", path.display()),
            Err(e) => log::warn!("unreadable definition cache {}: {e}", path.display()),
        }
    }

    let nodes = hier.nodes();
    let mut values = Vec::with_capacity(nodes.len() * encoder.dimension());
    for chunk in nodes.chunks(ENCODE_CHUNK) {
        let texts: Vec<&str> = chunk.iter().map(|s| s.definition.as_str()).collect();
        for e in encoder.embed_text_batch(&texts)? {
            if e.dim() != encoder.dimension() {
                return Err(SimError::DimensionMismatch {
                    expected: encoder.dimension(),
                    got: e.dim(),
                });
            }
            values.extend_from_slice(e.as_slice());
        }
    }
    let ids = nodes.iter().map(|s| s.id.clone()).collect();
    let matrix = DefinitionMatrix::assemble(
        ids,
        encoder.dimension(),
        values,
        encoder.model_id().to_owned(),
        hash,
    )?;
    if let Some(path) = path {
        matrix.to_table().write(&path)?;
    }
    Ok(matrix)
}

/// Cosine between `x` and the definition embedding of `id`.
pub fn z_score<T: Query>(x: &[T], id: &str, defmat: &DefinitionMatrix) -> Result<f64, SimError> {
    let nx = defmat.check_query(x)?;
    let i = defmat.index_of(id)?;
    Ok(row_cosine(x, nx, defmat.row(i), defmat.norms[i]))
}

/// `z` for every row, in row order.
pub fn z_all<T: Query>(x: &[T], defmat: &DefinitionMatrix) -> Result<Vec<f64>, SimError> {
    let nx = defmat.check_query(x)?;
    Ok((0..defmat.len())
        .map(|i| row_cosine(x, nx, defmat.row(i), defmat.norms[i]))
        .collect())
}

fn total(z: &[f64]) -> u32 {
    u32::try_from(z.len()).expect("hierarchy larger than u32::MAX")
}

/// Rank of row `i` given all scores.
pub fn rank_from_z(z: &[f64], i: usize) -> RankScore {
    let zi = z[i];
    let below = z.iter().filter(|&&v| v < zi).count() as u32;
    RankScore::new(below, total(z))
}

/// Ranks of every row with one sort; tied rows share the count of strictly
/// smaller scores.
pub fn ranks_from_z(z: &[f64]) -> Vec<RankScore> {
    let n = total(z);
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_unstable_by(|&a, &b| z[a].total_cmp(&z[b]));
    let mut out = vec![RankScore::new(0, n.max(1)); z.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && z[order[end]] == z[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            out[i] = RankScore::new(start as u32, n);
        }
        start = end;
    }
    out
}

/// Best rank over `rows`: the rank of the row with the largest `z`, which
/// is the maximum since rank is non-decreasing in `z`.
pub fn max_rank_from_z(z: &[f64], rows: &[usize]) -> RankScore {
    let best = rows
        .iter()
        .map(|&r| z[r])
        .fold(f64::NEG_INFINITY, f64::max);
    let below = z.iter().filter(|&&v| v < best).count() as u32;
    RankScore::new(below, total(z))
}

pub fn rank_sim<T: Query>(x: &[T], id: &str, defmat: &DefinitionMatrix) -> Result<RankScore, SimError> {
    let i = defmat.index_of(id)?;
    let z = z_all(x, defmat)?;
    Ok(rank_from_z(&z, i))
}

pub fn rank_all<T: Query>(x: &[T], defmat: &DefinitionMatrix) -> Result<Vec<RankScore>, SimError> {
    Ok(ranks_from_z(&z_all(x, defmat)?))
}

/// Highest rank similarity among `id` and its "is a" descendants.
pub fn max_rank_sim<T: Query>(
    x: &[T],
    id: &str,
    hier: &Hierarchy,
    defmat: &DefinitionMatrix,
) -> Result<RankScore, SimError> {
    let rows = defmat.concept_rows(hier, id)?;
    let z = z_all(x, defmat)?;
    Ok(max_rank_from_z(&z, &rows))
}

/// The `k` best-ranked concepts, descending, ties by id.
pub fn top_concepts<T: Query>(
    x: &[T],
    defmat: &DefinitionMatrix,
    k: usize,
) -> Result<Vec<(String, RankScore)>, SimError> {
    if k == 0 {
        return Err(SimError::InvalidK);
    }
    let ranks = rank_all(x, defmat)?;
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    order.sort_by(|&a, &b| ranks[b].cmp(&ranks[a]).then_with(|| defmat.ids[a].cmp(&defmat.ids[b])));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (defmat.ids[i].clone(), ranks[i]))
        .collect())
}
