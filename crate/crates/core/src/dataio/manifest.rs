use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{
    area_resize, or_pool_mask, read_image_file, read_mask_png, RawImage, SATURATION_LEVEL,
    THUMBNAIL_SIZE,
};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["image_path", "camera_id", "gt_r", "gt_g", "gt_b", "mask_path"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest root (or absolute).
    pub image_path: String,
    pub camera_id: String,
    /// Unit-norm ground-truth illuminant.
    pub gt: [f64; 3],
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    image_path: String,
    camera_id: String,
    gt_r: f64,
    gt_g: f64,
    gt_b: f64,
    #[serde(default)]
    mask_path: Option<String>,
}

pub fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Distinct camera ids, sorted.
    pub fn cameras(&self) -> Vec<String> {
        let mut cams: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.camera_id.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        cams.sort();
        cams
    }

    /// Entries whose indices are listed, in order, sharing this root.
    pub fn subset(&self, ids: &[usize]) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            entries: ids.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.camera_id.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "entry `{}` has an empty camera_id",
                    e.image_path
                )));
            }
            if !seen.insert(e.image_path.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate image_path `{}`",
                    e.image_path
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        for e in &self.entries {
            w.serialize(Row {
                image_path: e.image_path.clone(),
                camera_id: e.camera_id.clone(),
                gt_r: e.gt[0],
                gt_g: e.gt[1],
                gt_b: e.gt[2],
                mask_path: e.mask_path.clone(),
            })?;
        }
        if self.entries.is_empty() {
            w.write_record(MANIFEST_HEADER)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Parse and validate a manifest CSV. Paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != MANIFEST_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`, got `{}`", MANIFEST_HEADER.join(","), header.join(",")),
        ));
    }
    let mut entries = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = entries.len() as u64 + 2;
        let gt = [row.gt_r, row.gt_g, row.gt_b];
        if gt.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(parse_err(line, format!("ground truth {gt:?} must be finite and positive")));
        }
        entries.push(ManifestEntry {
            image_path: row.image_path,
            camera_id: row.camera_id,
            gt: normalize3(gt),
            mask_path: row.mask_path.filter(|s| !s.is_empty()),
        });
    }
    let manifest = DatasetManifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Load one entry as a thumbnail: scale to `[0,1]`, mask clipped pixels,
/// area-average down to `size×size` and OR-pool the mask.
pub fn load_image_sized(manifest: &DatasetManifest, entry: &ManifestEntry, size: usize) -> Result<RawImage> {
    load_entry(manifest, entry, Some(size))
}

/// Thumbnail for size-agnostic consumers: images at least 150×150 are
/// reduced to 150×150, smaller ones are kept at their own size.
pub fn load_image(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<RawImage> {
    load_entry(manifest, entry, None)
}

fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry, size: Option<usize>) -> Result<RawImage> {
    let path = manifest.resolve(&entry.image_path);
    let decoded = read_image_file(&path)?;
    let (w, h) = (decoded.width, decoded.height);
    let size = size.unwrap_or(if w.min(h) >= THUMBNAIL_SIZE { THUMBNAIL_SIZE } else { 0 });
    if size > 0 && (w < size || h < size) {
        return Err(Error::InvalidInput(format!(
            "{}: {w}×{h} is smaller than the {size}×{size} thumbnail",
            path.display()
        )));
    }
    let mut img = RawImage::new(w, h, decoded.pixels)?;
    img.id = entry.image_path.clone();
    img.camera_id = entry.camera_id.clone();
    img.gt_illuminant = entry.gt;
    if let Some(mp) = &entry.mask_path {
        let mpath = manifest.resolve(mp);
        let (mw, mh, mask) = read_mask_png(&mpath)?;
        if (mw, mh) != (w, h) {
            return Err(Error::InvalidInput(format!(
                "{}: mask is {mw}×{mh}, image is {w}×{h}",
                mpath.display()
            )));
        }
        img.mask = Some(mask);
    }
    img.mask_saturated(SATURATION_LEVEL);
    if size > 0 && (w, h) != (size, size) {
        img.pixels = area_resize(&img.pixels, w, h, size, size);
        img.mask = img.mask.map(|m| or_pool_mask(&m, w, h, size, size));
        img.width = size;
        img.height = size;
    }
    Ok(img)
}

/// Load an unlabelled image file outside any manifest (no mask, neutral gt).
pub fn load_image_path(path: &Path, size: usize) -> Result<RawImage> {
    let entry = ManifestEntry {
        image_path: path.to_string_lossy().into_owned(),
        camera_id: String::new(),
        gt: [1.0 / 3f64.sqrt(); 3],
        mask_path: None,
    };
    load_image_sized(&DatasetManifest::default(), &entry, size)
}
