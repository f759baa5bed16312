//! Linear raw-RGB images, their on-disk containers and thumbnail resampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of the square thumbnails the pipeline works on.
pub const THUMBNAIL_SIZE: usize = 150;

/// Pixels with any channel at or above this value are treated as clipped.
pub const SATURATION_LEVEL: f32 = 0.98;

const RAWF_MAGIC: &[u8; 4] = b"RAWF";

/// A linear raw-RGB image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub id: String,
    pub camera_id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triplets.
    pub pixels: Vec<[f32; 3]>,
    /// Unit-norm illuminant in the camera's raw space.
    pub gt_illuminant: [f64; 3],
    /// `true` marks pixels excluded from every statistic.
    pub mask: Option<Vec<bool>>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{width}×{height} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(RawImage {
            id: String::new(),
            camera_id: String::new(),
            width,
            height,
            pixels,
            gt_illuminant: [1.0 / 3f64.sqrt(); 3],
            mask: None,
        })
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[i])
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.pixels.len() {
            return Err(Error::InvalidInput(format!(
                "mask has {} entries for {} pixels",
                mask.len(),
                self.pixels.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// Every pixel multiplied by `k`.
    pub fn scaled(&self, k: f32) -> RawImage {
        let mut out = self.clone();
        out.pixels
            .iter_mut()
            .for_each(|p| p.iter_mut().for_each(|c| *c *= k));
        out
    }

    /// Add clipped pixels to the mask.
    pub fn mask_saturated(&mut self, level: f32) {
        let n = self.pixels.len();
        let mask = self.mask.get_or_insert_with(|| vec![false; n]);
        for (m, p) in mask.iter_mut().zip(&self.pixels) {
            if p.iter().any(|&c| c >= level) {
                *m = true;
            }
        }
    }

    /// Distinct unmasked colors with their multiplicities, in first-seen order.
    pub fn pixel_set(&self) -> Result<PixelSet> {
        let mut index: HashMap<[u32; 3], usize> = HashMap::new();
        let mut set = PixelSet::default();
        for (i, p) in self.pixels.iter().enumerate() {
            if self.is_masked(i) {
                continue;
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite value at pixel {i} of `{}`",
                    self.id
                )));
            }
            if p.iter().any(|&c| c < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "negative value at pixel {i} of `{}`",
                    self.id
                )));
            }
            let key = p.map(f32::to_bits);
            match index.get(&key) {
                Some(&j) => set.weights[j] += 1.0,
                None => {
                    index.insert(key, set.colors.len());
                    set.colors.push(p.map(f64::from));
                    set.weights.push(1.0);
                }
            }
        }
        Ok(set)
    }
}

/// Weighted color samples: the unordered pixel population of an image.
///
/// Every per-pixel sum in the pipeline is a sum over this set with the
/// multiplicity as weight, which is exact and much smaller for images with
/// large uniform regions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelSet {
    pub colors: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl PixelSet {
    /// Unit-weight set from raw colors, no deduplication.
    pub fn from_colors(colors: Vec<[f64; 3]>) -> Self {
        let weights = vec![1.0; colors.len()];
        PixelSet { colors, weights }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Colors as a `3×K` row-major matrix (one row per channel).
    pub fn channel_major(&self) -> Vec<f64> {
        let k = self.colors.len();
        let mut out = vec![0.0; 3 * k];
        for (j, c) in self.colors.iter().enumerate() {
            for ch in 0..3 {
                out[ch * k + j] = c[ch];
            }
        }
        out
    }

    pub fn scaled(&self, k: f64) -> PixelSet {
        PixelSet {
            colors: self.colors.iter().map(|c| c.map(|v| v * k)).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Area-average (box) resampling of `src` (`w×h`, `C` floats per pixel) to `ow×oh`.
pub fn area_resize<const C: usize>(
    src: &[[f32; C]],
    w: usize,
    h: usize,
    ow: usize,
    oh: usize,
) -> Vec<[f32; C]> {
    let xw = box_weights(w, ow);
    let yw = box_weights(h, oh);
    // rows first, accumulating in f64
    let mut tmp = vec![[0.0f64; C]; ow * h];
    for y in 0..h {
        for (ox, taps) in xw.iter().enumerate() {
            let acc = &mut tmp[y * ow + ox];
            for &(x, wt) in taps {
                for c in 0..C {
                    acc[c] += wt * src[y * w + x][c] as f64;
                }
            }
        }
    }
    let mut out = vec![[0.0f32; C]; ow * oh];
    for (oy, taps) in yw.iter().enumerate() {
        for ox in 0..ow {
            let mut acc = [0.0f64; C];
            for &(y, wt) in taps {
                for c in 0..C {
                    acc[c] += wt * tmp[y * ow + ox][c];
                }
            }
            out[oy * ow + ox] = acc.map(|v| v as f32);
        }
    }
    out
}

/// Logical-OR pooling of a mask onto the same grid as [`area_resize`].
pub fn or_pool_mask(mask: &[bool], w: usize, h: usize, ow: usize, oh: usize) -> Vec<bool> {
    let xw = box_weights(w, ow);
    let yw = box_weights(h, oh);
    let mut out = vec![false; ow * oh];
    for (oy, ytaps) in yw.iter().enumerate() {
        for (ox, xtaps) in xw.iter().enumerate() {
            out[oy * ow + ox] = ytaps
                .iter()
                .any(|&(y, _)| xtaps.iter().any(|&(x, _)| mask[y * w + x]));
        }
    }
    out
}

/// For each output cell, the source indices it overlaps and their normalized
/// overlap weights.
fn box_weights(n: usize, out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / out as f64;
    (0..out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 1e-12).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Decoded pixels and dimensions, before any metadata is attached.
pub struct DecodedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

/// Read an image container, dispatching on the file's magic bytes.
pub fn read_image_file(path: &Path) -> Result<DecodedImage> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: file too short", path.display())))?;
    drop(f);
    if &magic == RAWF_MAGIC {
        read_rawf(path)
    } else if magic == [0x89, b'P', b'N', b'G'] {
        read_png_rgb(path)
    } else {
        Err(Error::Format(format!(
            "{}: neither PNG nor RAWF",
            path.display()
        )))
    }
}

pub fn read_rawf(path: &Path) -> Result<DecodedImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != RAWF_MAGIC {
        return Err(Error::Format(format!("{}: missing RAWF header", path.display())));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if w == 0 || h == 0 || body.len() != w * h * 12 {
        return Err(Error::Corrupt(format!(
            "{}: {w}×{h} RAWF with {} payload bytes",
            path.display(),
            body.len()
        )));
    }
    let pixels = body
        .chunks_exact(12)
        .map(|px| {
            let ch = |i: usize| f32::from_le_bytes(px[i * 4..i * 4 + 4].try_into().unwrap());
            [ch(0), ch(1), ch(2)]
        })
        .collect();
    Ok(DecodedImage {
        width: w,
        height: h,
        pixels,
    })
}

pub fn write_rawf(path: &Path, width: usize, height: usize, pixels: &[[f32; 3]]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = |b: &[u8]| out.write_all(b).map_err(|e| Error::io(path, e));
    write(RAWF_MAGIC)?;
    write(&(width as u32).to_le_bytes())?;
    write(&(height as u32).to_le_bytes())?;
    for p in pixels {
        for c in p {
            write(&c.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn png_reader(path: &Path, expand: bool) -> Result<png::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    if expand {
        decoder.set_transformations(png::Transformations::EXPAND);
    }
    decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// 8- or 16-bit RGB(A) PNG, scaled to `[0, 1]` by the maximum code value.
/// Alpha is ignored.
pub fn read_png_rgb(path: &Path) -> Result<DecodedImage> {
    let mut reader = png_reader(path, false)?;
    let info = reader.info();
    let (ct, depth) = (info.color_type, info.bit_depth);
    let channels = match ct {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data = &buf[..frame.buffer_size()];
    let pixels: Vec<[f32; 3]> = match depth {
        png::BitDepth::Sixteen => data
            .chunks_exact(2 * channels)
            .map(|px| {
                let ch = |i: usize| u16::from_be_bytes([px[2 * i], px[2 * i + 1]]) as f32 / 65535.0;
                [ch(0), ch(1), ch(2)]
            })
            .collect(),
        png::BitDepth::Eight => data
            .chunks_exact(channels)
            .map(|px| [0, 1, 2].map(|i| px[i] as f32 / 255.0))
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported bit depth {other:?}",
                path.display()
            )))
        }
    };
    Ok(DecodedImage {
        width: w,
        height: h,
        pixels,
    })
}

pub fn write_png16(path: &Path, width: usize, height: usize, pixels: &[[f32; 3]]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut data = Vec::with_capacity(pixels.len() * 6);
    for p in pixels {
        for &c in p {
            let code = (c.clamp(0.0, 1.0) * 65535.0).round() as u16;
            data.extend_from_slice(&code.to_be_bytes());
        }
    }
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Grayscale PNG mask; nonzero samples are masked.
pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let mut reader = png_reader(path, true)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = match (frame.color_type, frame.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => 2,
        (ct, bd) => {
            return Err(Error::Format(format!(
                "{}: mask must be grayscale, got {ct:?}/{bd:?}",
                path.display()
            )))
        }
    };
    let data = &buf[..frame.buffer_size()];
    let mask = data
        .chunks_exact(stride)
        .map(|s| s.iter().any(|&b| b != 0))
        .collect();
    Ok((w, h, mask))
}

pub fn write_mask_png(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    writer
        .write_image_data(&data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
