use super::LossGrad;
use crate::imgcore::RgbImage;
use crate::numeric::{compensated_sum, sign};

/// Per-channel mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn moments(img: &RgbImage) -> MomentStats {
    let n = img.pixel_count() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        let plane = img.plane(c);
        let mu = compensated_sum(plane.iter().copied()) / n;
        let var = compensated_sum(plane.iter().map(|v| (v - mu) * (v - mu))) / n;
        mean[c] = mu;
        std[c] = var.sqrt();
    }
    MomentStats { mean, std }
}

/// `Σ_c |μ_c(pred) − μ_c(target)| + |σ_c(pred) − σ_c(target)|`.
///
/// Images may differ in size. Subgradient 0 is used where a difference is
/// exactly zero and for the σ term of a flat channel.
pub fn moment_loss(pred: &RgbImage, target: &RgbImage) -> LossGrad {
    let p = moments(pred);
    let t = moments(target);
    let n = pred.pixel_count();
    let nf = n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * n];
    for c in 0..3 {
        let dm = p.mean[c] - t.mean[c];
        let ds = p.std[c] - t.std[c];
        value += dm.abs() + ds.abs();
        let gm = sign(dm) / nf;
        let gs = if p.std[c] > 0.0 {
            sign(ds) / (nf * p.std[c])
        } else {
            0.0
        };
        let plane = pred.plane(c);
        for (g, &x) in grad[c * n..(c + 1) * n].iter_mut().zip(plane) {
            *g = gm + gs * (x - p.mean[c]);
        }
    }
    LossGrad { value, grad }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_images_have_zero_loss_and_grad() {
        let img = RgbImage::from_fn(3, 3, |y, x| [y as f64 * 0.1, x as f64 * 0.2, 0.5]);
        let l = moment_loss(&img, &img);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn constant_images_closed_form() {
        let a = RgbImage::filled(4, 4, [0.5; 3]);
        let b = RgbImage::filled(2, 5, [0.7; 3]);
        let l = moment_loss(&a, &b);
        assert!((l.value - 0.6).abs() < 1e-12);
        // flat prediction: σ gradient defined as 0, μ gradient −1/N
        assert!(l.grad.iter().all(|g| (g + 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn single_pixel_has_zero_sigma_gradient() {
        let a = RgbImage::filled(1, 1, [0.2, 0.4, 0.6]);
        let b = RgbImage::from_fn(2, 2, |y, x| [(y + x) as f64 * 0.3; 3]);
        let l = moment_loss(&a, &b);
        assert!(l.grad.iter().all(|g| g.abs() == 1.0 || *g == 0.0));
    }

    #[test]
    fn population_statistics() {
        let img = RgbImage::from_fn(1, 2, |_, x| [x as f64; 3]);
        let m = moments(&img);
        assert_eq!(m.mean, [0.5; 3]);
        assert_eq!(m.std, [0.5; 3]);
    }
}
