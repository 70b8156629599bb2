//! Fixed RAW → pseudo-RGB pre-processing: level normalization, white
//! balance, bilinear demosaic, optional 3×3 box denoise and gamma encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BayerChannel, RawPatch, RgbImage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denoise {
    #[default]
    Off,
    Box3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawProcConfig {
    pub black_level: u16,
    pub white_level: u16,
    /// Gains for R, G_r, G_b, B.
    pub wb_gains: [f64; 4],
    pub gamma: f64,
    pub denoise: Denoise,
}

impl Default for RawProcConfig {
    fn default() -> Self {
        Self {
            black_level: 0,
            white_level: 1023,
            wb_gains: [1.0; 4],
            gamma: 2.2,
            denoise: Denoise::Off,
        }
    }
}

impl RawProcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.black_level >= self.white_level {
            return Err(Error::Config(format!(
                "black level {} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.wb_gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Config(format!(
                "white-balance gains must be positive, got {:?}",
                self.wb_gains
            )));
        }
        Ok(())
    }
}

/// Four normalized Bayer planes (R, G_r, G_b, B), each `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerPlanes {
    height: usize,
    width: usize,
    planes: [Vec<f64>; 4],
}

impl BayerPlanes {
    pub fn new(height: usize, width: usize, planes: [Vec<f64>; 4]) -> Result<Self> {
        if planes.iter().any(|p| p.len() != height * width) {
            return Err(Error::Shape(format!(
                "bayer planes must each be {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            planes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self, channel: BayerChannel) -> &[f64] {
        &self.planes[channel as usize]
    }

    #[inline]
    fn at(&self, channel: BayerChannel, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.planes[channel as usize][y * self.width + x]
    }

    /// Bilinear sample at fractional plane coordinates with replicated borders.
    fn sample(&self, channel: BayerChannel, fy: f64, fx: f64) -> f64 {
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (fy.floor(), fx.floor());
        let (ty, tx) = (fy - y0, fx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let v00 = self.at(channel, y0, x0);
        let v01 = self.at(channel, y0, x0 + 1);
        let v10 = self.at(channel, y0 + 1, x0);
        let v11 = self.at(channel, y0 + 1, x0 + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
    }
}

/// `v = clamp((s − black) / (white − black), 0, 1) · gain`, clamped to `[0, 1]`.
pub fn normalize(raw: &RawPatch, cfg: &RawProcConfig) -> BayerPlanes {
    let (h, w) = (raw.height(), raw.width());
    let black = cfg.black_level as f64;
    let range = cfg.white_level as f64 - black;
    let channels = [
        BayerChannel::R,
        BayerChannel::Gr,
        BayerChannel::Gb,
        BayerChannel::B,
    ];
    let planes = channels.map(|ch| {
        let gain = cfg.wb_gains[ch as usize];
        let mut plane = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = raw.get(ch, y, x) as f64;
                let v = ((s - black) / range).clamp(0.0, 1.0) * gain;
                plane.push(v.clamp(0.0, 1.0));
            }
        }
        plane
    });
    BayerPlanes {
        height: h,
        width: w,
        planes,
    }
}

/// Reconstructs a `2H × 2W` RGB image from the RGGB planes.
///
/// Mosaic site `(2i, 2j)` holds R, `(2i, 2j+1)` G_r, `(2i+1, 2j)` G_b and
/// `(2i+1, 2j+1)` B. Red and blue are bilinear in their own plane grids;
/// green at R/B sites is the mean of the four cross neighbours. Plane
/// indices are clamped at the borders.
pub fn demosaic(bayer: &BayerPlanes) -> RgbImage {
    use BayerChannel::{Gb, Gr, B, R};
    let (oh, ow) = (2 * bayer.height, 2 * bayer.width);
    RgbImage::from_fn(oh, ow, |y, x| {
        let (i, j) = ((y / 2) as isize, (x / 2) as isize);
        let r = bayer.sample(R, y as f64 / 2.0, x as f64 / 2.0);
        let b = bayer.sample(B, (y as f64 - 1.0) / 2.0, (x as f64 - 1.0) / 2.0);
        let g = match (y % 2, x % 2) {
            (0, 1) => bayer.at(Gr, i, j),
            (1, 0) => bayer.at(Gb, i, j),
            (0, 0) => {
                0.25 * (bayer.at(Gr, i, j - 1)
                    + bayer.at(Gr, i, j)
                    + bayer.at(Gb, i - 1, j)
                    + bayer.at(Gb, i, j))
            }
            _ => {
                0.25 * (bayer.at(Gb, i, j)
                    + bayer.at(Gb, i, j + 1)
                    + bayer.at(Gr, i, j)
                    + bayer.at(Gr, i + 1, j))
            }
        };
        [r, g, b]
    })
}

/// 3×3 mean filter per channel, replicated borders.
pub fn box_denoise(img: &RgbImage) -> RgbImage {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut out = RgbImage::zeros(img.height(), img.width());
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let yy = (y + dy).clamp(0, h - 1) as usize;
                        let xx = (x + dx).clamp(0, w - 1) as usize;
                        acc += img.get(c, yy, xx);
                    }
                }
                out.set(c, y as usize, x as usize, acc / 9.0);
            }
        }
    }
    out
}

/// `out = in^(1/gamma)` elementwise.
pub fn gamma_encode(img: &RgbImage, gamma: f64) -> RgbImage {
    let mut out = img.clone();
    let inv = 1.0 / gamma;
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0).powf(inv));
    out
}

/// Full pipeline: normalize → demosaic → optional denoise → gamma.
pub fn preprocess(raw: &RawPatch, cfg: &RawProcConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let rgb = demosaic(&normalize(raw, cfg));
    let rgb = match cfg.denoise {
        Denoise::Off => rgb,
        Denoise::Box3 => box_denoise(&rgb),
    };
    Ok(gamma_encode(&rgb, cfg.gamma).clamped())
}
