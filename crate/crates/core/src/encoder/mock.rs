use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Embedding, Encoder, EncoderError};
use crate::image::Image;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Deterministic pseudo-embeddings with no model behind them.
///
/// The input bytes are hashed with 64-bit FNV-1a; the hash seeds a ChaCha8
/// stream that yields `D` standard-normal draws, which are L2-normalised.
/// Text input is `b"t"` followed by the UTF-8 bytes. Image input is `b"i"`,
/// width and height (u32 LE), channel count, then the raw pixels; images
/// are not resized.
#[derive(Debug, Clone)]
pub struct MockHashEncoder {
    dimension: usize,
    model_id: String,
}

impl MockHashEncoder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            dimension,
            model_id: format!("mock-hash-{dimension}"),
        }
    }

    fn vector_for_seed(&self, seed: u64) -> Embedding {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // a zero draw vector has probability zero
        Embedding::normalized(&draws).expect("gaussian draws are finite and nonzero")
    }
}

impl Encoder for MockHashEncoder {
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
        Ok(self.vector_for_seed(fnv1a64(&[b"t", text.as_bytes()])))
    }

    fn embed_image(&self, image: &Image) -> Result<Embedding, EncoderError> {
        let seed = fnv1a64(&[
            b"i",
            &image.width().to_le_bytes(),
            &image.height().to_le_bytes(),
            &[image.channels()],
            image.data(),
        ]);
        Ok(self.vector_for_seed(seed))
    }

    fn embed_image_batch(&self, images: &[Image]) -> Result<Vec<Embedding>, EncoderError> {
        images.par_iter().map(|img| self.embed_image(img)).collect()
    }
}
