use super::HeadGrad;
use crate::imgcore::RgbImage;

/// Global 3×3 color matrix plus bias (a 1×1 convolution), output clamped to `[0, 1]`.
///
/// Parameters: `M` row-major (9) followed by `t` (3).
#[derive(Clone, Debug, PartialEq)]
pub struct CcmHead {
    params: Vec<f64>,
}

impl Default for CcmHead {
    fn default() -> Self {
        Self::identity()
    }
}

impl CcmHead {
    pub const PARAMS: usize = 12;

    pub fn identity() -> Self {
        Self::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    pub fn new(matrix: [[f64; 3]; 3], bias: [f64; 3]) -> Self {
        let mut params = Vec::with_capacity(Self::PARAMS);
        params.extend(matrix.iter().flatten());
        params.extend(bias);
        Self { params }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.params[r * 3 + c]))
    }

    pub fn bias(&self) -> [f64; 3] {
        [self.params[9], self.params[10], self.params[11]]
    }

    pub(crate) fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn pre_activation(&self, x: &RgbImage) -> Vec<f64> {
        let n = x.pixel_count();
        let m = self.matrix();
        let t = self.bias();
        let mut out = vec![0.0; 3 * n];
        for c in 0..3 {
            let dst = &mut out[c * n..(c + 1) * n];
            for (p, o) in dst.iter_mut().enumerate() {
                *o = m[c][0] * x.plane(0)[p] + m[c][1] * x.plane(1)[p] + m[c][2] * x.plane(2)[p] + t[c];
            }
        }
        out
    }

    pub fn forward(&self, x: &RgbImage) -> RgbImage {
        let data = self
            .pre_activation(x)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        RgbImage::new(x.height(), x.width(), data).expect("finite forward")
    }

    pub fn backward(&self, x: &RgbImage, upstream: &[f64]) -> HeadGrad {
        let n = x.pixel_count();
        let pre = self.pre_activation(x);
        let m = self.matrix();
        let mut params = vec![0.0; Self::PARAMS];
        let mut input = vec![0.0; 3 * n];
        for c in 0..3 {
            for p in 0..n {
                let v = pre[c * n + p];
                if !(0.0..=1.0).contains(&v) {
                    continue;
                }
                let g = upstream[c * n + p];
                for d in 0..3 {
                    params[c * 3 + d] += g * x.plane(d)[p];
                    input[d * n + p] += m[c][d] * g;
                }
                params[9 + c] += g;
            }
        }
        HeadGrad { params, input }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_passthrough() {
        let x = RgbImage::from_fn(3, 4, |y, x| [y as f64 / 3.0, x as f64 / 4.0, 0.5]);
        assert_eq!(CcmHead::identity().forward(&x), x);
    }

    #[test]
    fn half_gain_on_white() {
        let h = CcmHead::new([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]], [0.0; 3]);
        let out = h.forward(&RgbImage::filled(2, 2, [1.0; 3]));
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn one_pixel_gradients_are_outer_products() {
        let h = CcmHead::new(
            [[0.5, 0.1, 0.0], [0.0, 0.4, 0.1], [0.2, 0.0, 0.3]],
            [0.1, 0.0, 0.05],
        );
        let x = RgbImage::filled(1, 1, [0.2, 0.6, 0.4]);
        let g = [1.0, -2.0, 0.5];
        let out = h.backward(&x, &g);
        // ∂M_cd = g_c x_d, ∂t_c = g_c, ∂x_d = Σ_c M_cd g_c
        let xs = [0.2, 0.6, 0.4];
        for c in 0..3 {
            for d in 0..3 {
                assert!((out.params[c * 3 + d] - g[c] * xs[d]).abs() < 1e-15);
            }
            assert_eq!(out.params[9 + c], g[c]);
        }
        let m = h.matrix();
        for d in 0..3 {
            let expect: f64 = (0..3).map(|c| m[c][d] * g[c]).sum();
            assert!((out.input[d] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn clamped_outputs_pass_no_gradient() {
        let h = CcmHead::new(
            [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0, -1.0, 0.0],
        );
        let x = RgbImage::filled(1, 1, [0.9, 0.5, 0.5]);
        let out = h.backward(&x, &[1.0, 1.0, 1.0]);
        assert_eq!(&out.params[..6], &[0.0; 6]);
        assert_eq!(out.params[11], 1.0);
    }
}
