use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use convis_core::lexdb::{filter_hierarchy, load_seed_list};
use convis_core::saliency::{aggregate, score_grid_cached, PatchCache, SaliencyError};
use convis_core::simcore::build_definition_matrix;
use convis_core::{load_lexicon, DefinitionMatrix, Encoder, Hierarchy, Image, SaliencyConfig, SaliencyMap};

use crate::config::Settings;

/// Everything needed to answer saliency and similarity queries. Immutable
/// after construction apart from the patch cache.
pub struct Pipeline {
    pub hier: Hierarchy,
    pub defmat: DefinitionMatrix,
    pub encoder: Arc<dyn Encoder>,
    pub cache: PatchCache,
    pub config: SaliencyConfig,
}

impl Pipeline {
    pub fn load(settings: &Settings) -> Result<Self> {
        let spec = settings.backend_spec()?;
        let encoder = spec.open().context("opening encoder backend")?;
        Self::with_encoder(settings, encoder)
    }

    pub fn with_encoder(settings: &Settings, encoder: Arc<dyn Encoder>) -> Result<Self> {
        settings.saliency.validate()?;
        let hier = load_hierarchy(settings)?;
        let cache_dir = settings.cache();
        let defmat = build_definition_matrix(&hier, encoder.as_ref(), cache_dir.as_ref())
            .context("embedding concept definitions")?;
        Ok(Self {
            hier,
            defmat,
            encoder,
            cache: PatchCache::new(cache_dir),
            config: settings.saliency,
        })
    }

    /// Saliency map plus whether the patch embeddings were already cached.
    pub fn saliency(&self, image: &Image, synset: &str, cfg: &SaliencyConfig) -> Result<(SaliencyMap, bool), SaliencyError> {
        let (grid, hit) = score_grid_cached(
            image,
            synset,
            cfg,
            self.encoder.as_ref(),
            &self.defmat,
            &self.hier,
            &self.cache,
        )?;
        let mut map = aggregate(&grid)?;
        map.synset = synset.to_owned();
        map.image = image.content_hash_hex();
        Ok((map, hit))
    }
}

/// The lexicon, restricted to the seed list when one is configured.
pub fn load_hierarchy(settings: &Settings) -> Result<Hierarchy> {
    let path = settings
        .lexicon_path
        .as_ref()
        .ok_or_else(|| anyhow!("no lexicon configured (set lexicon_path or pass --lexicon)"))?;
    let lexicon = load_lexicon(path).with_context(|| format!("loading lexicon {}", path.display()))?;
    Ok(match &settings.seed_path {
        Some(seeds) => {
            let ids = load_seed_list(seeds).with_context(|| format!("loading seeds {}", seeds.display()))?;
            filter_hierarchy(&lexicon, &ids)?
        }
        None => Hierarchy::from_lexicon(&lexicon),
    })
}
