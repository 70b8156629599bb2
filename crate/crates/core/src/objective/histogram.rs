//! Triangular-kernel soft histograms on Y and joint UV, and the losses
//! comparing them.
//!
//! Bin centers sit at bin midpoints. Values beyond the outermost centers
//! are clamped onto them, so every pixel deposits exactly unit mass and the
//! gradient vanishes in the two edge half-bins.

use serde::{Deserialize, Serialize};

use super::LossGrad;
use crate::imgcore::{rgb_to_yuv, RgbImage, LUMA_B, LUMA_G, LUMA_R, U_SCALE, V_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftHistogramSpec {
    pub bins_y: usize,
    /// Bins per chroma axis; the joint histogram has `bins_uv²` cells.
    pub bins_uv: usize,
}

impl Default for SoftHistogramSpec {
    fn default() -> Self {
        Self {
            bins_y: 64,
            bins_uv: 32,
        }
    }
}

/// Mass deposited by one value into bins `bin` and `bin + 1`; `slope` is
/// `d w1 / d value` (and `−d w0 / d value`).
#[derive(Clone, Copy, Debug)]
struct Splat {
    bin: usize,
    w0: f64,
    w1: f64,
    slope: f64,
}

#[inline]
fn splat(v: f64, lo: f64, hi: f64, bins: usize) -> Splat {
    debug_assert!(bins >= 2);
    let width = (hi - lo) / bins as f64;
    let t = (v - lo) / width - 0.5;
    let last = (bins - 1) as f64;
    if t <= 0.0 {
        return Splat {
            bin: 0,
            w0: 1.0,
            w1: 0.0,
            slope: 0.0,
        };
    }
    if t >= last {
        return Splat {
            bin: bins - 2,
            w0: 0.0,
            w1: 1.0,
            slope: 0.0,
        };
    }
    let k = (t.floor() as usize).min(bins - 2);
    let frac = t - k as f64;
    Splat {
        bin: k,
        w0: 1.0 - frac,
        w1: frac,
        slope: 1.0 / width,
    }
}

fn assert_bins(bins: usize) {
    assert!(bins >= 2, "soft histograms need at least two bins, got {bins}");
}

/// Luma histogram of an RGB image; sums to 1.
pub fn soft_histogram_y(img: &RgbImage, bins: usize) -> Vec<f64> {
    assert_bins(bins);
    let yuv = rgb_to_yuv(img);
    let inv_n = 1.0 / img.pixel_count() as f64;
    let mut h = vec![0.0; bins];
    for &y in yuv.plane(0) {
        let s = splat(y, 0.0, 1.0, bins);
        h[s.bin] += s.w0 * inv_n;
        h[s.bin + 1] += s.w1 * inv_n;
    }
    h
}

/// Joint chroma histogram, row index U, column index V; sums to 1.
pub fn soft_histogram_uv(img: &RgbImage, bins: usize) -> Vec<f64> {
    assert_bins(bins);
    let yuv = rgb_to_yuv(img);
    let inv_n = 1.0 / img.pixel_count() as f64;
    let mut h = vec![0.0; bins * bins];
    for (&u, &v) in yuv.plane(1).iter().zip(yuv.plane(2)) {
        let su = splat(u, -0.5, 0.5, bins);
        let sv = splat(v, -0.5, 0.5, bins);
        for (du, wu) in [(0, su.w0), (1, su.w1)] {
            for (dv, wv) in [(0, sv.w0), (1, sv.w1)] {
                h[(su.bin + du) * bins + sv.bin + dv] += wu * wv * inv_n;
            }
        }
    }
    h
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `‖h_Y(pred) − h_Y(target)‖²` with its gradient in RGB.
pub fn hist_loss_y(pred: &RgbImage, target: &RgbImage, bins: usize) -> LossGrad {
    let hp = soft_histogram_y(pred, bins);
    let ht = soft_histogram_y(target, bins);
    let value = squared_distance(&hp, &ht);
    let diff: Vec<f64> = hp.iter().zip(&ht).map(|(a, b)| 2.0 * (a - b)).collect();

    let n = pred.pixel_count();
    let inv_n = 1.0 / n as f64;
    let yuv = rgb_to_yuv(pred);
    let mut grad = vec![0.0; 3 * n];
    for (p, &y) in yuv.plane(0).iter().enumerate() {
        let s = splat(y, 0.0, 1.0, bins);
        let dy = (diff[s.bin + 1] - diff[s.bin]) * s.slope * inv_n;
        grad[p] = dy * LUMA_R;
        grad[n + p] = dy * LUMA_G;
        grad[2 * n + p] = dy * LUMA_B;
    }
    LossGrad { value, grad }
}

/// `‖H_UV(pred) − H_UV(target)‖²` with its gradient in RGB.
pub fn hist_loss_uv(pred: &RgbImage, target: &RgbImage, bins: usize) -> LossGrad {
    let hp = soft_histogram_uv(pred, bins);
    let ht = soft_histogram_uv(target, bins);
    let value = squared_distance(&hp, &ht);
    let diff: Vec<f64> = hp.iter().zip(&ht).map(|(a, b)| 2.0 * (a - b)).collect();

    let n = pred.pixel_count();
    let inv_n = 1.0 / n as f64;
    let yuv = rgb_to_yuv(pred);
    let mut grad = vec![0.0; 3 * n];
    for p in 0..n {
        let su = splat(yuv.plane(1)[p], -0.5, 0.5, bins);
        let sv = splat(yuv.plane(2)[p], -0.5, 0.5, bins);
        let d = |i: usize, j: usize| diff[(su.bin + i) * bins + sv.bin + j];
        // ∂/∂U: weights along U move by ∓slope, V weights fixed
        let du = su.slope * (sv.w0 * (d(1, 0) - d(0, 0)) + sv.w1 * (d(1, 1) - d(0, 1))) * inv_n;
        let dv = sv.slope * (su.w0 * (d(0, 1) - d(0, 0)) + su.w1 * (d(1, 1) - d(1, 0))) * inv_n;
        // U = U_SCALE (B − Y), V = V_SCALE (R − Y)
        grad[p] = -du * U_SCALE * LUMA_R + dv * V_SCALE * (1.0 - LUMA_R);
        grad[n + p] = -du * U_SCALE * LUMA_G - dv * V_SCALE * LUMA_G;
        grad[2 * n + p] = du * U_SCALE * (1.0 - LUMA_B) - dv * V_SCALE * LUMA_B;
    }
    LossGrad { value, grad }
}
