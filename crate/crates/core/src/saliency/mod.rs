//! Concept saliency maps.
//!
//! For every location on a stride-`omega` lattice the image is cropped at a
//! small and a large scale, both crops are embedded and their mean is
//! scored against the concept with the descendant-maximised rank
//! similarity. Each pixel then receives the average score of the grid
//! locations whose window covers it.

use serde::{Deserialize, Serialize};

mod aggregate;
mod export;
mod grid;
mod patches;
mod render;

pub use aggregate::aggregate;
pub use export::{read_cvis, write_cvis, CVIS_MAGIC, CVIS_VERSION};
pub use grid::{patch_budget, patch_grid, Location, Rect};
pub use patches::{encode_patches, local_embedding, patch_key, PatchCache, PatchEmbeddings, PatchScores};
pub use render::{render_mask, render_overlay, Palette};

use crate::encoder::{Encoder, EncoderError};
use crate::image::{Image, ImageError};
use crate::lexdb::Hierarchy;
use crate::simcore::{DefinitionMatrix, RankScore, SimError};

#[derive(Debug, thiserror::Error)]
pub enum SaliencyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image {width}x{height} admits no grid location (needs {need} px per side)")]
    ImageTooSmall { width: u32, height: u32, need: u32 },
    #[error("({x}, {y}) is not a grid location")]
    NotAGridLocation { x: u32, y: u32 },
    #[error("encoder returned dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("map is {map_w}x{map_h} but image is {image_w}x{image_h}")]
    SizeMismatch {
        map_w: u32,
        map_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("empty score grid")]
    EmptyGrid,
    #[error("malformed saliency file: {0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which grid scores contribute to a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// Locations whose large patch contains the pixel.
    #[default]
    Containment,
    /// Locations whose origin is within `delta_l` of the pixel along both
    /// axes (`|l - i| < delta_l`, `|m - j| < delta_l`).
    Symmetric,
}

/// How the grid treats image borders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Only origins whose large patch lies fully inside the image.
    #[default]
    FitOnly,
    /// Every lattice origin; patches are shifted inward at the borders.
    Clamp,
}

impl std::str::FromStr for WindowMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "containment" => Ok(Self::Containment),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(format!("unknown window mode {other:?}")),
        }
    }
}

impl std::str::FromStr for BoundaryPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fit-only" | "fit_only" => Ok(Self::FitOnly),
            "clamp" => Ok(Self::Clamp),
            other => Err(format!("unknown boundary policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SaliencyConfig {
    /// Small patch side in pixels.
    pub delta_s: u32,
    /// Large patch side in pixels.
    pub delta_l: u32,
    /// Grid stride in pixels.
    pub omega: u32,
    pub window_mode: WindowMode,
    pub boundary_policy: BoundaryPolicy,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            delta_s: 64,
            delta_l: 128,
            omega: 16,
            window_mode: WindowMode::Containment,
            boundary_policy: BoundaryPolicy::FitOnly,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<(), SaliencyError> {
        if self.delta_s == 0 || self.delta_s > self.delta_l {
            return Err(SaliencyError::Config(format!(
                "need 0 < delta_s ({}) <= delta_l ({})",
                self.delta_s, self.delta_l
            )));
        }
        if self.omega == 0 {
            return Err(SaliencyError::Config("omega must be at least 1".into()));
        }
        Ok(())
    }
}

/// Patch scores on the grid of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub width: u32,
    pub height: u32,
    pub config: SaliencyConfig,
    pub locations: Vec<Location>,
    pub scores: Vec<RankScore>,
}

impl ScoreGrid {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().map(|r| r.value())
    }
}

/// Per-pixel saliency in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
    pub synset: String,
    /// Content hash of the source image, hex.
    pub image: String,
}

impl SaliencyMap {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// 8-bit grayscale image with `round(255 * y)` (halves round up).
    pub fn to_gray(&self) -> Image {
        let data = self
            .values
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8)
            .collect();
        Image::new(self.width, self.height, 1, data).expect("map dimensions are valid")
    }
}

/// Scores every grid location of `image` against concept `synset`.
/// Patch embeddings come from (and are stored in) `cache`; the returned
/// flag is true when no encoder call was needed.
#[allow(clippy::too_many_arguments)]
pub fn score_grid_cached(
    image: &Image,
    synset: &str,
    cfg: &SaliencyConfig,
    encoder: &dyn Encoder,
    defmat: &DefinitionMatrix,
    hier: &Hierarchy,
    cache: &PatchCache,
) -> Result<(ScoreGrid, bool), SaliencyError> {
    cfg.validate()?;
    let rows = defmat.concept_rows(hier, synset)?;
    let (emb, scores, hit) = cache.scores(image, cfg, encoder, defmat)?;
    let total = defmat.len() as u32;
    let ranks = (0..emb.len())
        .map(|i| RankScore::new(scores.max_rank_below(i, &rows), total))
        .collect();
    Ok((
        ScoreGrid {
            width: image.width(),
            height: image.height(),
            config: *cfg,
            locations: emb.locations.clone(),
            scores: ranks,
        },
        hit,
    ))
}

pub fn score_grid(
    image: &Image,
    synset: &str,
    cfg: &SaliencyConfig,
    encoder: &dyn Encoder,
    defmat: &DefinitionMatrix,
    hier: &Hierarchy,
    cache: &PatchCache,
) -> Result<ScoreGrid, SaliencyError> {
    Ok(score_grid_cached(image, synset, cfg, encoder, defmat, hier, cache)?.0)
}

/// Saliency map of `synset` over `image`.
pub fn compute_saliency(
    image: &Image,
    synset: &str,
    cfg: &SaliencyConfig,
    encoder: &dyn Encoder,
    defmat: &DefinitionMatrix,
    hier: &Hierarchy,
    cache: &PatchCache,
) -> Result<SaliencyMap, SaliencyError> {
    let grid = score_grid(image, synset, cfg, encoder, defmat, hier, cache)?;
    let mut map = aggregate(&grid)?;
    map.synset = synset.to_owned();
    map.image = image.content_hash_hex();
    Ok(map)
}

#[cfg(test)]
mod tests;
