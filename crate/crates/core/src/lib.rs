//! Segmentation-aware prompting for a toy multimodal report generator.
//!
//! The crate covers the whole pipeline: binary structure masks, a frozen
//! ViT-style encoder with tapped layers, the segmentation-token extractor,
//! interleaved prompt assembly, set-of-marks overlays, a trainable adapter and
//! decoder LM, evaluation metrics, and a synthetic study generator.

pub mod encoder;
mod error;
pub mod extractor;
pub mod manifest;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pgm;
pub mod pipeline;
pub mod prompt;
pub mod som;
pub mod synth;

pub use encoder::{Encoded, FeatureGrid, VitConfig, VitEncoder};
pub use error::{Error, Result};
pub use extractor::{ExtractorConfig, SegExtractor, SegTokenPair};
pub use manifest::{Manifest, Split, StudyRecord};
pub use masks::{BinaryMask, GridMask, MaskSet, StructureId};
pub use pgm::GrayImage;
pub use synth::{generate_dataset, SynthSpec};
