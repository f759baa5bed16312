use std::path::Path;

use rayon::prelude::*;

use super::image::{PixelSet, RawImage};
use super::manifest::{load_image_sized, DatasetManifest};
use crate::error::Result;

/// What training and model evaluation need from one image: its unmasked
/// colours with multiplicities and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub camera_id: String,
    pub gt: [f64; 3],
    pub pixels: PixelSet,
}

impl Sample {
    pub fn from_image(image: &RawImage) -> Result<Sample> {
        Ok(Sample {
            id: image.id.clone(),
            camera_id: image.camera_id.clone(),
            gt: image.gt_illuminant,
            pixels: image.pixel_set()?,
        })
    }
}

/// Load entries `ids` of `manifest` at `size`×`size`, in parallel.
pub fn load_samples(manifest: &DatasetManifest, ids: &[usize], size: usize) -> Vec<Result<Sample>> {
    ids.par_iter()
        .map(|&i| Sample::from_image(&load_image_sized(manifest, &manifest.entries[i], size)?))
        .collect()
}

/// Grouping key for images of the same scene: the file stem of the path.
/// Synthetic datasets name a scene identically under every sensor.
pub fn scene_key(image_path: &str) -> String {
    Path::new(image_path)
        .file_stem()
        .map_or_else(|| image_path.to_owned(), |s| s.to_string_lossy().into_owned())
}
