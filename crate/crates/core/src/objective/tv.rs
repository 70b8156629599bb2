use super::LossGrad;
use crate::imgcore::RgbImage;
use crate::numeric::sign;

/// Anisotropic L1 total variation normalized by `C·H·W`; `sign(0) = 0`.
pub fn tv_loss(pred: &RgbImage) -> LossGrad {
    let (h, w) = (pred.height(), pred.width());
    let n = h * w;
    let norm = 1.0 / (3 * n) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * n];
    for c in 0..3 {
        let plane = pred.plane(c);
        let g = &mut grad[c * n..(c + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if y + 1 < h {
                    let d = plane[p + w] - plane[p];
                    value += d.abs();
                    let s = sign(d) * norm;
                    g[p + w] += s;
                    g[p] -= s;
                }
                if x + 1 < w {
                    let d = plane[p + 1] - plane[p];
                    value += d.abs();
                    let s = sign(d) * norm;
                    g[p + 1] += s;
                    g[p] -= s;
                }
            }
        }
    }
    LossGrad {
        value: value * norm,
        grad,
    }
}
