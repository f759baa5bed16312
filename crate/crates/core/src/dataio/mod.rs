//! Dataset manifests, image containers, camera folds and synthetic data.

pub mod folds;
pub mod image;
pub mod manifest;
pub mod sample;
pub mod synth;

pub use folds::{make_folds, plan_excluding, FoldPlan};
pub use image::{PixelSet, RawImage, THUMBNAIL_SIZE};
pub use manifest::{load_image, load_image_path, load_image_sized, load_manifest, normalize3, DatasetManifest, ManifestEntry};
pub use sample::{load_samples, scene_key, Sample};
pub use synth::{synth_generate, SynthConfig, SynthDataset};
