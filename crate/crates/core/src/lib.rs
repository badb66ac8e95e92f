//! Concept saliency maps for joint image-text embedding spaces.
//!
//! Image patches and concept definitions are embedded into the same space;
//! each patch is scored against a concept by how highly the concept (or any
//! of its "is a" descendants) ranks among all concepts of a lexical
//! hierarchy, and the patch scores are averaged into a per-pixel map.

pub mod encoder;
pub mod evalkit;
pub mod image;
pub mod lexdb;
pub mod saliency;
pub mod simcore;
pub mod store;

pub use encoder::{cosine, Embedding, Encoder, EncoderError};
pub use image::Image;
pub use lexdb::{filter_hierarchy, load_lexicon, Hierarchy, Lexicon, Synset};

pub use saliency::{SaliencyConfig, SaliencyMap};
pub use simcore::{DefinitionMatrix, RankScore};
