//! Joint image/text embedding backends.
//!
//! Every backend maps text and images into the same `D`-dimensional space
//! and returns L2-normalised vectors. Backends are deterministic: equal
//! inputs give bitwise-equal outputs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::image::Image;

mod fixture;
mod mock;
#[cfg(feature = "remote")]
mod remote;

pub use fixture::FixtureEncoder;
pub use mock::MockHashEncoder;
pub(crate) use mock::fnv1a64;
#[cfg(feature = "remote")]
pub use remote::RemoteEncoder;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("text of {len} characters exceeds backend limit {limit}")]
    TextTooLong { len: usize, limit: usize },
    #[error("empty text")]
    EmptyText,
    #[error("no fixture vector registered for {0}")]
    MissingFixture(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("batch item {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EncoderError>,
    },
}

/// A point in the joint embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Wraps raw values without normalising. Fails on non-finite entries.
    pub fn new(values: Vec<f32>) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: &[f64]) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EncoderError::ZeroVector);
        }
        Ok(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, EncoderError> {
    if a.len() != b.len() {
        return Err(EncoderError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EncoderError::ZeroVector);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

/// Cosine with precomputed norms; both norms must be nonzero.
pub(crate) fn cosine_with_norms(a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// The pluggable image and text towers.
///
/// Implementations must be callable concurrently; concurrent calls behave
/// as some serial interleaving.
pub trait Encoder: Send + Sync {
    /// Identifies the model weights; part of every cache key.
    fn model_id(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Square side images are resized to before encoding, if any.
    fn input_resolution(&self) -> Option<u32> {
        None
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EncoderError>;

    fn embed_image(&self, image: &Image) -> Result<Embedding, EncoderError>;

    fn embed_text_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EncoderError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.embed_text(t).map_err(|e| EncoderError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Elementwise equal to [`Encoder::embed_image`]; order preserved.
    fn embed_image_batch(&self, images: &[Image]) -> Result<Vec<Embedding>, EncoderError> {
        images
            .iter()
            .enumerate()
            .map(|(index, img)| {
                self.embed_image(img).map_err(|e| EncoderError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<E: Encoder + ?Sized> Encoder for Arc<E> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn input_resolution(&self) -> Option<u32> {
        (**self).input_resolution()
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, EncoderError> {
        (**self).embed_text(text)
    }
    fn embed_image(&self, image: &Image) -> Result<Embedding, EncoderError> {
        (**self).embed_image(image)
    }
    fn embed_text_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EncoderError> {
        (**self).embed_text_batch(texts)
    }
    fn embed_image_batch(&self, images: &[Image]) -> Result<Vec<Embedding>, EncoderError> {
        (**self).embed_image_batch(images)
    }
}

/// Resizes to the backend's square input resolution, if it declares one.
pub fn preprocess(image: &Image, resolution: Option<u32>) -> Image {
    match resolution {
        Some(r) => image.resize_bilinear(r, r),
        None => image.clone(),
    }
}

/// Wraps an encoder and counts how many texts and images reach it.
pub struct CountingEncoder<E> {
    inner: E,
    texts: AtomicUsize,
    images: AtomicUsize,
}

impl<E: Encoder> CountingEncoder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            texts: AtomicUsize::new(0),
            images: AtomicUsize::new(0),
        }
    }

    pub fn text_calls(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }

    pub fn image_calls(&self) -> usize {
        self.images.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.texts.store(0, Ordering::SeqCst);
        self.images.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Encoder> Encoder for CountingEncoder<E> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn input_resolution(&self) -> Option<u32> {
        self.inner.input_resolution()
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, EncoderError> {
        self.texts.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_text(text)
    }
    fn embed_image(&self, image: &Image) -> Result<Embedding, EncoderError> {
        self.images.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_image(image)
    }
    fn embed_text_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EncoderError> {
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed_text_batch(texts)
    }
    fn embed_image_batch(&self, images: &[Image]) -> Result<Vec<Embedding>, EncoderError> {
        self.images.fetch_add(images.len(), Ordering::SeqCst);
        self.inner.embed_image_batch(images)
    }
}

/// Which backend to construct, as named in configuration files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    MockHash { dimension: usize },
    Fixture { path: std::path::PathBuf },
    Remote {
        url: String,
        model_id: String,
        dimension: usize,
        input_resolution: Option<u32>,
    },
}

impl BackendSpec {
    pub fn open(&self) -> Result<Arc<dyn Encoder>, EncoderError> {
        Ok(match self {
            BackendSpec::MockHash { dimension } => Arc::new(MockHashEncoder::new(*dimension)),
            BackendSpec::Fixture { path } => Arc::new(FixtureEncoder::load(path)?),
            #[cfg(feature = "remote")]
            BackendSpec::Remote {
                url,
                model_id,
                dimension,
                input_resolution,
            } => Arc::new(RemoteEncoder::new(
                url,
                model_id,
                *dimension,
                *input_resolution,
            )?),
            #[cfg(not(feature = "remote"))]
            BackendSpec::Remote { .. } => {
                return Err(EncoderError::Backend(
                    "built without the `remote` feature".into(),
                ))
            }
        })
    }
}
