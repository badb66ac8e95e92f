//! Quantitative evaluation: box accuracy of saliency maps and
//! out-of-distribution detection.

use std::path::Path;

use serde::Serialize;

use crate::encoder::{Encoder, EncoderError};
use crate::image::{Image, ImageError};
use crate::lexdb::{Hierarchy, LexError};
use crate::saliency::{compute_saliency, PatchCache, SaliencyConfig, SaliencyError};
use crate::simcore::{DefinitionMatrix, SimError};

mod ood;
mod wsol;

pub use ood::{
    auroc, ood_score_imgimg, ood_score_maxrank, ood_score_rank, openness, run_ood_experiment, LabeledImage,
    OodMethod, OodReport, OodSpec,
};
pub use wsol::{
    bounding_box, box_from_map, default_tau_grid, iou, largest_connected_component, max_box_acc, threshold_map,
    BBox, BoxAccuracy, Connectivity, Mask, WsolSample,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid box {0:?}")]
    InvalidBox([u32; 4]),
    #[error("{0} maps but {1} boxes")]
    LengthMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("NaN score")]
    NaN,
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("image {0}: {1}")]
    Image(String, ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WsolReport {
    pub model_id: String,
    pub samples: usize,
    pub delta_hat: f64,
    pub max_box_acc: f64,
    pub best_tau: f64,
    pub curve: Vec<(f64, f64)>,
    pub config: SaliencyConfig,
}

/// Loads a localisation manifest; relative paths are resolved against the
/// manifest's directory.
pub fn load_wsol_manifest(path: impl AsRef<Path>) -> Result<Vec<WsolSample>, EvalError> {
    let path = path.as_ref();
    let mut samples: Vec<WsolSample> = serde_json::from_slice(&std::fs::read(path)?)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for s in &mut samples {
        if Path::new(&s.path).is_relative() {
            s.path = base.join(&s.path).to_string_lossy().into_owned();
        }
    }
    Ok(samples)
}

/// Computes a saliency map per sample (for `concept` if given, else the
/// sample's own concept) and reports box accuracy.
#[allow(clippy::too_many_arguments)]
pub fn run_wsol(
    samples: &[WsolSample],
    concept: Option<&str>,
    cfg: &SaliencyConfig,
    delta_hat: f64,
    tau_grid: &[f64],
    encoder: &dyn Encoder,
    defmat: &DefinitionMatrix,
    hier: &Hierarchy,
    cache: &PatchCache,
) -> Result<WsolReport, EvalError> {
    let mut maps = Vec::with_capacity(samples.len());
    for s in samples {
        let image = Image::open(&s.path).map_err(|e| EvalError::Image(s.path.clone(), e))?;
        let c = concept.unwrap_or(&s.concept);
        maps.push(compute_saliency(&image, c, cfg, encoder, defmat, hier, cache)?);
    }
    let gt: Vec<BBox> = samples.iter().map(|s| s.bbox).collect();
    let acc = max_box_acc(&maps, &gt, delta_hat, tau_grid, Connectivity::default())?;
    Ok(WsolReport {
        model_id: encoder.model_id().to_owned(),
        samples: samples.len(),
        delta_hat,
        max_box_acc: acc.max_box_acc,
        best_tau: acc.best_tau,
        curve: acc.curve,
        config: *cfg,
    })
}
