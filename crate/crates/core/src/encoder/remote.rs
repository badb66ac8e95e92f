use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{preprocess, Embedding, Encoder, EncoderError};
use crate::image::Image;

#[derive(Serialize)]
struct TextRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Serialize)]
struct ImageRequest {
    images_b64: Vec<String>,
}

#[derive(Deserialize)]
struct VectorsResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for an HTTP embedding service.
///
/// `POST {base}/embed/text` with `{"texts": [...]}` and
/// `POST {base}/embed/image` with `{"images_b64": [...]}` (PNG payloads)
/// both answer `{"vectors": [[f32]]}`. Images are resized to
/// `input_resolution` before upload; returned vectors are re-normalised.
///
/// Uses a blocking client; call from a worker thread, not from inside an
/// async executor.
pub struct RemoteEncoder {
    base: String,
    model_id: String,
    dimension: usize,
    input_resolution: Option<u32>,
    client: reqwest::blocking::Client,
}

impl RemoteEncoder {
    pub fn new(
        base_url: &str,
        model_id: &str,
        dimension: usize,
        input_resolution: Option<u32>,
    ) -> Result<Self, EncoderError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| EncoderError::Backend(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_owned(),
            model_id: model_id.to_owned(),
            dimension,
            input_resolution,
            client,
        })
    }

    fn post<T: Serialize>(&self, route: &str, body: &T, expected: usize) -> Result<Vec<Embedding>, EncoderError> {
        let url = format!("{}{}", self.base, route);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| EncoderError::Backend(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EncoderError::Backend(format!("{url}: HTTP {status}")));
        }
        let parsed: VectorsResponse = resp
            .json()
            .map_err(|e| EncoderError::Backend(format!("{url}: {e}")))?;
        if parsed.vectors.len() != expected {
            return Err(EncoderError::Backend(format!(
                "{url}: expected {expected} vectors, got {}",
                parsed.vectors.len()
            )));
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(EncoderError::DimensionMismatch(self.dimension, v.len()));
                }
                let wide: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                Embedding::normalized(&wide)
            })
            .collect()
    }
}

impl Encoder for RemoteEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn input_resolution(&self) -> Option<u32> {
        self.input_resolution
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EncoderError> {
        Ok(self.embed_text_batch(&[text])?.remove(0))
    }

    fn embed_image(&self, image: &Image) -> Result<Embedding, EncoderError> {
        Ok(self.embed_image_batch(std::slice::from_ref(image))?.remove(0))
    }

    fn embed_text_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EncoderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(index) = texts.iter().position(|t| t.is_empty()) {
            return Err(EncoderError::Batch {
                index,
                source: Box::new(EncoderError::EmptyText),
            });
        }
        self.post("/embed/text", &TextRequest { texts }, texts.len())
    }

    fn embed_image_batch(&self, images: &[Image]) -> Result<Vec<Embedding>, EncoderError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let engine = base64::engine::general_purpose::STANDARD;
        let images_b64 = images
            .iter()
            .enumerate()
            .map(|(index, img)| {
                preprocess(img, self.input_resolution)
                    .encode_png()
                    .map(|png| engine.encode(png))
                    .map_err(|e| EncoderError::Batch {
                        index,
                        source: Box::new(EncoderError::Backend(e.to_string())),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.post("/embed/image", &ImageRequest { images_b64 }, images.len())
    }
}
