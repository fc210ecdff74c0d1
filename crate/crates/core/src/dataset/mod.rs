//! Annotated image datasets: manifest ingest, health statistics, seeded
//! splits, and image augmentation.

mod augment;
mod health;
mod manifest;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::GroundTruth;

pub use augment::{
    augment_dataset, augment_image, image_rng, mosaic, AugmentParams, AugmentationPlan, Augmented, LabeledImage,
    Recipe, RecipeBounds, MIN_BOX_AREA,
};
pub use health::{health_check, ClassStats, HealthReport, SplitCounts};
pub use manifest::{
    convert_center_pixels, load_manifest, parse_manifest, write_manifest, CenterPixelRecord, ManifestRecord,
};
pub use split::{split_dataset, split_sizes, SplitRatios};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image `{path}`: {message}")]
    Image { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Split {
    Training,
    Validation,
    Testing,
    #[default]
    Unassigned,
}

impl Split {
    pub fn is_unassigned(&self) -> bool {
        matches!(self, Split::Unassigned)
    }
}

/// One image of the dataset with its boxes. `truths` may be empty (null image).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub truths: Vec<GroundTruth>,
    pub split: Split,
    /// Pixel file relative to the manifest directory, when known.
    pub file: Option<String>,
}

impl AnnotatedImage {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, truths: Vec<GroundTruth>) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            truths,
            split: Split::Unassigned,
            file: None,
        }
    }

    pub fn is_null(&self) -> bool {
        self.truths.is_empty()
    }
}
