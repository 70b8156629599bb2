use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::raw::{decode_raw, encode_raw, RawPatch};
use crate::error::{Error, Result};

/// Sidecar describing the dimensions of a headerless RAW buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDims {
    pub height: usize,
    pub width: usize,
}

/// Loads PNG or JPEG (chosen by content) as an RGB image in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbImage::from_fn(h, w, |y, x| {
        let p = img.get_pixel(x as u32, y as u32).0;
        p.map(|v| v as f64 / 255.0)
    }))
}

pub fn to_rgb8(img: &RgbImage) -> image::RgbImage {
    image::RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let px = img.pixel(y as usize, x as usize);
        image::Rgb(px.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Writes an 8-bit PNG; values are clamped to `[0, 1]` and rounded.
pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a RAW patch. Dimensions come from `dims` when given, otherwise from
/// the JSON sidecar next to the file (`<stem>.json`).
pub fn load_raw(path: impl AsRef<Path>, dims: Option<RawDims>) -> Result<RawPatch> {
    let path = path.as_ref();
    let dims = match dims {
        Some(d) => d,
        None => {
            let sidecar = path.with_extension("json");
            let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            serde_json::from_str(&text)?
        }
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, dims.height, dims.width)
}

/// Writes the RAW buffer plus its JSON sidecar.
pub fn save_raw(patch: &RawPatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_raw(patch)).map_err(|e| Error::io(path, e))?;
    let sidecar = path.with_extension("json");
    let dims = RawDims {
        height: patch.height(),
        width: patch.width(),
    };
    std::fs::write(&sidecar, serde_json::to_vec(&dims)?).map_err(|e| Error::io(&sidecar, e))
}
