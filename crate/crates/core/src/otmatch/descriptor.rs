//! Image-level descriptor: semantic embedding plus color-statistics blocks,
//! each L2-normalized and concatenated with equal weight.

use serde::{Deserialize, Serialize};

use crate::imgcore::RgbImage;
use crate::numeric::l2_normalize;
use crate::objective::{soft_histogram_uv, soft_histogram_y, SoftHistogramSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorSpec {
    /// Append the RGB Gram and Y / UV histogram blocks.
    pub color_statistics: bool,
    pub histogram: SoftHistogramSpec,
}

impl Default for DescriptorSpec {
    fn default() -> Self {
        Self {
            color_statistics: true,
            histogram: SoftHistogramSpec::default(),
        }
    }
}

/// Upper triangle of the 3×3 RGB channel correlation `Σ_p x_p x_pᵀ / N`.
pub fn color_gram(img: &RgbImage) -> [f64; 6] {
    let n = img.pixel_count() as f64;
    let mut out = [0.0; 6];
    let mut k = 0;
    for i in 0..3 {
        for j in i..3 {
            out[k] = img
                .plane(i)
                .iter()
                .zip(img.plane(j))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n;
            k += 1;
        }
    }
    out
}

pub fn composite_descriptor(
    semantic: Option<&[f32]>,
    image: Option<&RgbImage>,
    spec: &DescriptorSpec,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut push_block = |mut block: Vec<f64>| {
        l2_normalize(&mut block);
        out.extend(block);
    };
    if let Some(s) = semantic {
        push_block(s.iter().map(|&v| v as f64).collect());
    }
    if let (Some(img), true) = (image, spec.color_statistics) {
        push_block(color_gram(img).to_vec());
        push_block(soft_histogram_y(img, spec.histogram.bins_y));
        push_block(soft_histogram_uv(img, spec.histogram.bins_uv));
    }
    out
}
