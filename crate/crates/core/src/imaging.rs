//! Decoding, validation and normalization of fetched image bytes.
//!
//! Everything here works on in-memory buffers. Validation never panics on
//! hostile input; every failure is a [`Rejection`] with a reason.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Cursor;

use image::{DynamicImage, ImageFormat, ImageReader, Limits};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crawler::ImageLink;

/// Decoded formats the pipeline is willing to accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptedFormat {
    Png,
    Jpeg,
    /// First frame only.
    Gif,
    WebP,
    Bmp,
}

impl AcceptedFormat {
    fn from_image_format(f: ImageFormat) -> Option<Self> {
        match f {
            ImageFormat::Png => Some(Self::Png),
            ImageFormat::Jpeg => Some(Self::Jpeg),
            ImageFormat::Gif => Some(Self::Gif),
            ImageFormat::WebP => Some(Self::WebP),
            ImageFormat::Bmp => Some(Self::Bmp),
            _ => None,
        }
    }

    pub fn all() -> BTreeSet<AcceptedFormat> {
        [Self::Png, Self::Jpeg, Self::Gif, Self::WebP, Self::Bmp]
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    /// Both sides must be at least this many pixels.
    pub min_dimension: u32,
    pub max_bytes: usize,
    pub accepted_formats: BTreeSet<AcceptedFormat>,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            min_dimension: 64,
            max_bytes: 10 * 1024 * 1024,
            accepted_formats: AcceptedFormat::all(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Corrupt,
    Tiny,
    Oversize,
    UnsupportedFormat,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Corrupt => "corrupt",
            RejectReason::Tiny => "tiny",
            RejectReason::Oversize => "oversize",
            RejectReason::UnsupportedFormat => "unsupported_format",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{reason}: {detail}")]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Rejection {
            reason,
            detail: detail.into(),
        }
    }
}

/// A validated image as packed 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub source: ImageLink,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    /// Digest of the decoded raster (dimensions and pixels), not of the file.
    pub content_hash: u64,
}

impl ImageRecord {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Re-encodes the raster as PNG.
    pub fn to_png(&self) -> Vec<u8> {
        let img = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("record raster matches its dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }
}

pub fn raster_hash(width: u32, height: u32, pixels: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(width.to_le_bytes());
    h.update(height.to_le_bytes());
    h.update(pixels);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

const MAX_DECODE_SIDE: u32 = 16_384;
const MAX_DECODE_ALLOC: u64 = 512 * 1024 * 1024;

/// Decodes `raw` into an RGB record or says why it cannot.
///
/// Grayscale is replicated to three channels and alpha is composited over
/// white.
pub fn validate(raw: &[u8], link: &ImageLink, policy: &ValidationPolicy) -> Result<ImageRecord, Rejection> {
    if raw.len() > policy.max_bytes {
        return Err(Rejection::new(
            RejectReason::Oversize,
            format!("{} bytes exceeds limit of {}", raw.len(), policy.max_bytes),
        ));
    }
    let format = match image::guess_format(raw) {
        Ok(f) => f,
        Err(_) if looks_like_svg(raw) => {
            return Err(Rejection::new(RejectReason::UnsupportedFormat, "svg"));
        }
        Err(_) => return Err(Rejection::new(RejectReason::Corrupt, "unrecognized image signature")),
    };
    match AcceptedFormat::from_image_format(format) {
        Some(f) if policy.accepted_formats.contains(&f) => {}
        _ => {
            return Err(Rejection::new(
                RejectReason::UnsupportedFormat,
                format!("{format:?}"),
            ))
        }
    }

    let mut reader = ImageReader::with_format(Cursor::new(raw), format);
    let mut limits = Limits::default();
    limits.max_image_width = Some(MAX_DECODE_SIDE);
    limits.max_image_height = Some(MAX_DECODE_SIDE);
    limits.max_alloc = Some(MAX_DECODE_ALLOC);
    reader.limits(limits);
    let decoded = reader
        .decode()
        .map_err(|e| Rejection::new(RejectReason::Corrupt, e.to_string()))?;

    let (width, height) = (decoded.width(), decoded.height());
    if width < policy.min_dimension || height < policy.min_dimension {
        return Err(Rejection::new(
            RejectReason::Tiny,
            format!("{width}x{height} below {} px", policy.min_dimension),
        ));
    }

    let pixels = to_rgb_over_white(decoded);
    Ok(ImageRecord {
        source: link.clone(),
        width,
        height,
        content_hash: raster_hash(width, height, &pixels),
        pixels,
    })
}

fn looks_like_svg(raw: &[u8]) -> bool {
    let head = &raw[..raw.len().min(512)];
    let text = String::from_utf8_lossy(head).to_ascii_lowercase();
    text.trim_start().starts_with('<') && text.contains("<svg")
}

fn to_rgb_over_white(img: DynamicImage) -> Vec<u8> {
    if !img.color().has_alpha() {
        return img.into_rgb8().into_raw();
    }
    let rgba = img.into_rgba8();
    let mut out = Vec::with_capacity(rgba.len() / 4 * 3);
    for px in rgba.pixels() {
        let a = px[3] as u32;
        for c in &px.0[..3] {
            out.push(((*c as u32 * a + 255 * (255 - a) + 127) / 255) as u8);
        }
    }
    out
}

/// Square `side x side x 3` tensor of channel values in `[0, 1]`, HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    side: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(side: usize, data: Vec<f32>) -> Option<Self> {
        (side > 0 && data.len() == side * side * 3).then_some(Tensor { side, data })
    }

    pub fn filled(side: usize, value: f32) -> Self {
        Tensor {
            side,
            data: vec![value; side * side * 3],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.side + x) * 3 + c]
    }
}

/// Resizes the shorter edge to `side` (bilinear, half-pixel centers), takes
/// the centered `side x side` crop and scales channels to `[0, 1]`.
///
/// # Panics
///
/// If `side` is zero.
pub fn normalize(record: &ImageRecord, side: usize) -> Tensor {
    assert!(side > 0, "normalize side must be positive");
    let (w, h) = (record.width as usize, record.height as usize);
    let (rw, rh) = resized_dims(w, h, side);
    let x0 = (rw - side) / 2;
    let y0 = (rh - side) / 2;
    let sx = w as f64 / rw as f64;
    let sy = h as f64 / rh as f64;

    let xs: Vec<Tap> = (0..side).map(|ox| Tap::new(ox + x0, sx, w)).collect();
    let mut data = Vec::with_capacity(side * side * 3);
    for oy in 0..side {
        let ty = Tap::new(oy + y0, sy, h);
        for tx in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| record.pixels[(y * w + x) * 3 + c] as f64;
                let top = at(tx.lo, ty.lo) * (1.0 - tx.frac) + at(tx.hi, ty.lo) * tx.frac;
                let bot = at(tx.lo, ty.hi) * (1.0 - tx.frac) + at(tx.hi, ty.hi) * tx.frac;
                let v = top * (1.0 - ty.frac) + bot * ty.frac;
                data.push((v / 255.0).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor { side, data }
}

/// Dimensions after scaling the shorter edge to `side`.
pub fn resized_dims(w: usize, h: usize, side: usize) -> (usize, usize) {
    if w <= h {
        let rh = ((h as f64 * side as f64 / w as f64).round() as usize).max(side);
        (side, rh)
    } else {
        let rw = ((w as f64 * side as f64 / h as f64).round() as usize).max(side);
        (rw, side)
    }
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

impl Tap {
    fn new(dst: usize, scale: f64, src_len: usize) -> Tap {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        Tap {
            lo,
            hi: (lo + 1).min(src_len - 1),
            frac: pos - lo as f64,
        }
    }
}
