use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedding, Encoder, EncoderError};
use crate::image::Image;

/// On-disk layout of a fixture table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    pub dimension: usize,
    #[serde(default)]
    pub text: HashMap<String, Vec<f32>>,
    /// Keyed by [`Image::content_hash_hex`].
    #[serde(default)]
    pub image_sha256: HashMap<String, Vec<f32>>,
}

/// Backend that answers from an explicit lookup table, so tests can pin
/// exact similarity orderings. Unregistered inputs are an error.
///
/// Registered vectors are returned unchanged when their norm is within
/// 1e-6 of one and rescaled to unit norm otherwise.
#[derive(Debug, Clone)]
pub struct FixtureEncoder {
    dimension: usize,
    model_id: String,
    text: HashMap<String, Embedding>,
    images: HashMap<String, Embedding>,
}

impl FixtureEncoder {
    pub fn new(dimension: usize, model_id: impl Into<String>) -> Self {
        Self {
            dimension,
            model_id: model_id.into(),
            text: HashMap::new(),
            images: HashMap::new(),
        }
    }

    pub fn from_file(file: FixtureFile, model_id: impl Into<String>) -> Result<Self, EncoderError> {
        let mut enc = Self::new(file.dimension, model_id);
        for (k, v) in file.text {
            enc.insert_text(k, v)?;
        }
        for (k, v) in file.image_sha256 {
            let v = enc.prepare(v)?;
            enc.images.insert(k.to_lowercase(), v);
        }
        Ok(enc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EncoderError::Backend(format!("{}: {e}", path.display())))?;
        let file: FixtureFile = serde_json::from_str(&text)
            .map_err(|e| EncoderError::Backend(format!("{}: {e}", path.display())))?;
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        Self::from_file(file, format!("fixture-{}", &digest[..16]))
    }

    fn prepare(&self, v: Vec<f32>) -> Result<Embedding, EncoderError> {
        if v.len() != self.dimension {
            return Err(EncoderError::DimensionMismatch(self.dimension, v.len()));
        }
        let e = Embedding::new(v)?;
        let n = e.norm();
        if n == 0.0 {
            return Err(EncoderError::ZeroVector);
        }
        if (n - 1.0).abs() <= 1e-6 {
            Ok(e)
        } else {
            let wide: Vec<f64> = e.as_slice().iter().map(|&x| x as f64).collect();
            Embedding::normalized(&wide)
        }
    }

    pub fn insert_text(&mut self, key: impl Into<String>, v: Vec<f32>) -> Result<(), EncoderError> {
        let v = self.prepare(v)?;
        self.text.insert(key.into(), v);
        Ok(())
    }

    pub fn insert_image(&mut self, image: &Image, v: Vec<f32>) -> Result<(), EncoderError> {
        let v = self.prepare(v)?;
        self.images.insert(image.content_hash_hex(), v);
        Ok(())
    }
}

impl Encoder for FixtureEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EncoderError> {
        if text.is_empty() {
            return Err(EncoderError::EmptyText);
        }
        self.text
            .get(text)
            .cloned()
            .ok_or_else(|| EncoderError::MissingFixture(format!("text {text:?}")))
    }

    fn embed_image(&self, image: &Image) -> Result<Embedding, EncoderError> {
        let key = image.content_hash_hex();
        self.images
            .get(&key)
            .cloned()
            .ok_or_else(|| EncoderError::MissingFixture(format!("image {key}")))
    }
}
