//! Side-by-side (input | prediction) montages of stitched images.

use anyhow::bail;
use pseudopair::imgcore::RgbImage;
use pseudopair::stitcher::assemble;

/// Fill value for tiles whose patch is missing.
pub const MISSING_GRAY: f64 = 0.5;

/// Assembles a row-major grid, substituting a gray tile of the common patch
/// size for every `None`. Returns the image and the missing grid indices.
pub fn assemble_with_gaps(
    tiles: &[Option<RgbImage>],
    rows: usize,
    cols: usize,
) -> anyhow::Result<(RgbImage, Vec<usize>)> {
    if tiles.len() != rows * cols {
        bail!("{} tiles do not fill a {rows}×{cols} grid", tiles.len());
    }
    let Some(first) = tiles.iter().flatten().next() else {
        bail!("every patch of the grid is missing");
    };
    let (h, w) = (first.height(), first.width());
    let missing: Vec<usize> = (0..tiles.len()).filter(|&i| tiles[i].is_none()).collect();
    let filled: Vec<RgbImage> = tiles
        .iter()
        .map(|t| {
            t.clone()
                .unwrap_or_else(|| RgbImage::filled(h, w, [MISSING_GRAY; 3]))
        })
        .collect();
    Ok((assemble(&filled, rows, cols)?, missing))
}

/// Places `left` and `right` next to each other.
pub fn side_by_side(left: &RgbImage, right: &RgbImage) -> anyhow::Result<RgbImage> {
    if left.height() != right.height() || left.width() != right.width() {
        bail!(
            "panes differ in size: {}×{} vs {}×{}",
            left.height(),
            left.width(),
            right.height(),
            right.width()
        );
    }
    let w = left.width();
    Ok(RgbImage::from_fn(left.height(), 2 * w, |y, x| {
        if x < w {
            left.pixel(y, x)
        } else {
            right.pixel(y, x - w)
        }
    }))
}
