//! Manifest ingestion, landmark alignment, training augmentation and
//! subject-independent fold planning.

mod align;
mod augment;
mod folds;
mod landmarks;
mod manifest;

pub use align::{align_face, estimate_similarity, AlignedFace, SimilarityTransform};
pub use augment::{augment, AugmentPolicy, CropPosition, View};
pub use folds::{plan_folds, FoldPlan};
pub use landmarks::{FixedLandmarks, LandmarkProvider, LandmarkSet, LandmarkTemplate};
pub use manifest::{load_manifest, DatasetManifest, FaceSample};

use crate::error::Result;
use crate::raster::RgbImage;

/// Loads and aligns every expressive sample of a manifest, in manifest order.
pub fn align_samples(manifest: &DatasetManifest, template: &LandmarkTemplate) -> Result<Vec<AlignedFace>> {
    let reference = template.at_size(manifest.image_size);
    manifest
        .samples
        .iter()
        .map(|s| {
            let img = RgbImage::load(&manifest.resolve(&s.image_path))?;
            let mut face = align_face(&img, &s.landmarks, &reference, manifest.image_size)?;
            face.label = s.label;
            face.subject_id = s.subject_id.clone();
            Ok(face)
        })
        .collect()
}
