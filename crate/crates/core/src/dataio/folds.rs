use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

/// A train/test partition of manifest entry indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Cameras whose images form the test set.
    pub test_cameras: Vec<String>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl FoldPlan {
    pub fn label(&self) -> String {
        self.test_cameras.join("+")
    }
}

/// Hold out every image of `test_cameras`; train on all the rest.
pub fn plan_excluding(manifest: &DatasetManifest, test_cameras: &[String]) -> Result<FoldPlan> {
    let known = manifest.cameras();
    if let Some(c) = test_cameras.iter().find(|c| !known.contains(c)) {
        return Err(Error::InvalidInput(format!("camera `{c}` is not in the manifest")));
    }
    let (test_ids, train_ids) = (0..manifest.entries.len())
        .partition(|&i| test_cameras.contains(&manifest.entries[i].camera_id));
    Ok(FoldPlan {
        test_cameras: test_cameras.to_vec(),
        train_ids,
        test_ids,
    })
}

/// Leave-one-camera-out: one fold per distinct camera, ordered by camera id.
pub fn make_folds(manifest: &DatasetManifest) -> Result<Vec<FoldPlan>> {
    let cams = manifest.cameras();
    if cams.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "leave-one-camera-out needs at least 2 cameras, manifest has {}",
            cams.len()
        )));
    }
    cams.into_iter()
        .map(|c| plan_excluding(manifest, &[c]))
        .collect()
}
