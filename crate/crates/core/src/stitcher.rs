//! Grid-layout inference for a row-major patch stream and full-image assembly.
//!
//! Each candidate `(R, C)` with `R·C = N` is scored by the mean absolute
//! mismatch between `b`-pixel border strips of neighbouring patches. The
//! layout with the lowest score wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BayerChannel, RawPatch, RgbImage};
use crate::rawproc::{normalize, RawProcConfig};

pub const DEFAULT_BORDER: usize = 4;

/// Scalar map used to compare patch borders.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "score map of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn offset(&self, delta: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v + delta).collect(),
        }
    }
}

/// Mean intensity `(R + G + B) / 3`.
pub fn score_map_rgb(img: &RgbImage) -> ScoreMap {
    let n = img.pixel_count();
    let data = (0..n)
        .map(|p| (img.plane(0)[p] + img.plane(1)[p] + img.plane(2)[p]) / 3.0)
        .collect();
    ScoreMap {
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// Green proxy `(G_r + G_b) / 2` on normalized planes.
pub fn score_map_raw(raw: &RawPatch, cfg: &RawProcConfig) -> ScoreMap {
    let planes = normalize(raw, cfg);
    let gr = planes.plane(BayerChannel::Gr);
    let gb = planes.plane(BayerChannel::Gb);
    ScoreMap {
        height: raw.height(),
        width: raw.width(),
        data: gr.iter().zip(gb).map(|(a, b)| 0.5 * (a + b)).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutCandidate {
    pub rows: usize,
    pub cols: usize,
    pub score: f64,
}

/// All `(R, C)` with `R·C = n`, ordered by increasing `R`.
pub fn divisor_layouts(n: usize) -> Vec<(usize, usize)> {
    (1..=n).filter(|r| n % r == 0).map(|r| (r, n / r)).collect()
}

fn check_uniform(maps: &[ScoreMap]) -> Result<(usize, usize)> {
    let first = maps.first().ok_or_else(|| Error::Shape("no patches".into()))?;
    let dims = (first.height, first.width);
    if let Some(bad) = maps.iter().position(|m| (m.height, m.width) != dims) {
        return Err(Error::Shape(format!(
            "patch {bad} is {}x{}, expected {}x{}",
            maps[bad].height, maps[bad].width, dims.0, dims.1
        )));
    }
    Ok(dims)
}

fn horizontal_cost(left: &ScoreMap, right: &ScoreMap, b: usize) -> f64 {
    let (h, w) = (left.height, left.width);
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..b {
            acc += (left.at(i, w - b + j) - right.at(i, j)).abs();
        }
    }
    acc / (h * b) as f64
}

fn vertical_cost(top: &ScoreMap, bottom: &ScoreMap, b: usize) -> f64 {
    let (h, w) = (top.height, top.width);
    let mut acc = 0.0;
    for i in 0..b {
        for j in 0..w {
            acc += (top.at(h - b + i, j) - bottom.at(i, j)).abs();
        }
    }
    acc / (b * w) as f64
}

/// Seam-consistency score of reading `maps` as an `rows × cols` grid.
/// A single patch has no seams and scores 0.
pub fn seam_score(maps: &[ScoreMap], rows: usize, cols: usize, border: usize) -> Result<f64> {
    if rows * cols != maps.len() || rows == 0 {
        return Err(Error::Shape(format!(
            "layout {rows}x{cols} does not cover {} patches",
            maps.len()
        )));
    }
    let (h, w) = check_uniform(maps)?;
    if border == 0 || border > h.min(w) {
        return Err(Error::Config(format!(
            "border width {border} must be in 1..={}",
            h.min(w)
        )));
    }
    let seams = rows * (cols - 1) + (rows - 1) * cols;
    if seams == 0 {
        return Ok(0.0);
    }
    let hor: f64 = (0..rows)
        .flat_map(|r| (0..cols - 1).map(move |c| (r, c)))
        .map(|(r, c)| horizontal_cost(&maps[r * cols + c], &maps[r * cols + c + 1], border))
        .sum();
    let ver: f64 = (0..rows - 1)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| vertical_cost(&maps[r * cols + c], &maps[(r + 1) * cols + c], border))
        .sum();
    Ok((hor + ver) / seams as f64)
}

/// Scores every divisor layout (ordered by increasing `R`).
pub fn score_layouts(maps: &[ScoreMap], border: usize) -> Result<Vec<LayoutCandidate>> {
    divisor_layouts(maps.len())
        .into_par_iter()
        .map(|(rows, cols)| {
            seam_score(maps, rows, cols, border).map(|score| LayoutCandidate { rows, cols, score })
        })
        .collect()
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Picks the minimum-score layout; ties go to the most square layout, then
/// to fewer rows.
pub fn select_layout(candidates: &[LayoutCandidate]) -> Option<LayoutCandidate> {
    let best = candidates.iter().map(|c| c.score).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|c| c.score <= best + TIE_TOLERANCE)
        .min_by_key(|c| (c.rows.abs_diff(c.cols), c.rows))
        .copied()
}

pub fn infer_layout(maps: &[ScoreMap], border: usize) -> Result<LayoutCandidate> {
    if maps.len() == 1 {
        return Ok(LayoutCandidate {
            rows: 1,
            cols: 1,
            score: 0.0,
        });
    }
    let candidates = score_layouts(maps, border)?;
    Ok(select_layout(&candidates).expect("at least one divisor layout"))
}

/// Row-major concatenation into an `(R·H) × (C·W)` image.
pub fn assemble(patches: &[RgbImage], rows: usize, cols: usize) -> Result<RgbImage> {
    if rows * cols != patches.len() || patches.is_empty() {
        return Err(Error::Shape(format!(
            "layout {rows}x{cols} does not match {} patches",
            patches.len()
        )));
    }
    let (h, w) = (patches[0].height(), patches[0].width());
    if let Some(bad) = patches.iter().position(|p| p.height() != h || p.width() != w) {
        return Err(Error::Shape(format!(
            "patch {bad} is {}x{}, expected {h}x{w}",
            patches[bad].height(),
            patches[bad].width()
        )));
    }
    Ok(RgbImage::from_fn(rows * h, cols * w, |y, x| {
        patches[(y / h) * cols + x / w].pixel(y % h, x % w)
    }))
}

/// Cuts an image into a row-major `rows × cols` grid of equal patches.
pub fn cut(img: &RgbImage, rows: usize, cols: usize) -> Result<Vec<RgbImage>> {
    if rows == 0 || cols == 0 || img.height() % rows != 0 || img.width() % cols != 0 {
        return Err(Error::Shape(format!(
            "{}x{} image is not divisible into a {rows}x{cols} grid",
            img.height(),
            img.width()
        )));
    }
    let (h, w) = (img.height() / rows, img.width() / cols);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(img.crop(r * h, c * w, h, w)?);
        }
    }
    Ok(out)
}
