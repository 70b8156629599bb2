use super::HeadGrad;
use crate::imgcore::RgbImage;

pub const DEFAULT_LUT_SIZE: usize = 9;

/// `L × L × L` lattice of RGB outputs, trilinearly interpolated.
///
/// Entry `(i, j, k)` (R, G, B lattice indices) is stored at
/// `((i·L + j)·L + k)·3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lut3dHead {
    size: usize,
    params: Vec<f64>,
}

struct Corner {
    offset: usize,
    weight: f64,
    /// ∂weight / ∂(r, g, b) in lattice units
    dweight: [f64; 3],
}

struct Cell {
    corners: [Corner; 8],
    /// Per-axis scale from input value to lattice units; 0 where the input
    /// was clamped to the cube.
    scale: [f64; 3],
}

impl Lut3dHead {
    pub fn identity(size: usize) -> Self {
        assert!(size >= 2, "LUT lattice needs at least 2 points per axis");
        let step = 1.0 / (size - 1) as f64;
        let mut params = Vec::with_capacity(size * size * size * 3);
        for i in 0..size {
            for j in 0..size {
                for k in 0..size {
                    params.extend([i as f64 * step, j as f64 * step, k as f64 * step]);
                }
            }
        }
        Self { size, params }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn param_count_for(size: usize) -> usize {
        size * size * size * 3
    }

    pub(crate) fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn entry(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let o = ((i * self.size + j) * self.size + k) * 3;
        [self.params[o], self.params[o + 1], self.params[o + 2]]
    }

    pub fn set_entry(&mut self, i: usize, j: usize, k: usize, v: [f64; 3]) {
        let o = ((i * self.size + j) * self.size + k) * 3;
        self.params[o..o + 3].copy_from_slice(&v);
    }

    /// Keeps lattice entries inside `[0, 1]`.
    pub fn project(&mut self) {
        self.params.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    fn cell(&self, rgb: [f64; 3]) -> Cell {
        let last = (self.size - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut scale = [0.0; 3];
        for a in 0..3 {
            let inside = (0.0..=1.0).contains(&rgb[a]);
            let u = rgb[a].clamp(0.0, 1.0) * last;
            let b = (u.floor() as usize).min(self.size - 2);
            base[a] = b;
            frac[a] = u - b as f64;
            scale[a] = if inside { last } else { 0.0 };
        }
        let corners = std::array::from_fn(|idx| {
            let d = [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
            let w: [f64; 3] = std::array::from_fn(|a| if d[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            let dw: [f64; 3] = std::array::from_fn(|a| if d[a] == 1 { 1.0 } else { -1.0 });
            let (i, j, k) = (base[0] + d[0], base[1] + d[1], base[2] + d[2]);
            Corner {
                offset: ((i * self.size + j) * self.size + k) * 3,
                weight: w[0] * w[1] * w[2],
                dweight: [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]],
            }
        });
        Cell { corners, scale }
    }

    fn lookup_raw(&self, rgb: [f64; 3]) -> [f64; 3] {
        let cell = self.cell(rgb);
        let mut out = [0.0; 3];
        for corner in &cell.corners {
            for ch in 0..3 {
                out[ch] += corner.weight * self.params[corner.offset + ch];
            }
        }
        out
    }

    /// Interpolated value at one RGB coordinate, clamped to `[0, 1]`.
    pub fn lookup(&self, rgb: [f64; 3]) -> [f64; 3] {
        self.lookup_raw(rgb).map(|v| v.clamp(0.0, 1.0))
    }

    pub fn forward(&self, x: &RgbImage) -> RgbImage {
        let n = x.pixel_count();
        let mut data = vec![0.0; 3 * n];
        for p in 0..n {
            let v = self.lookup([x.plane(0)[p], x.plane(1)[p], x.plane(2)[p]]);
            for ch in 0..3 {
                data[ch * n + p] = v[ch];
            }
        }
        RgbImage::new(x.height(), x.width(), data).expect("finite forward")
    }

    pub fn backward(&self, x: &RgbImage, upstream: &[f64]) -> HeadGrad {
        let n = x.pixel_count();
        let mut params = vec![0.0; self.params.len()];
        let mut input = vec![0.0; 3 * n];
        for p in 0..n {
            let rgb = [x.plane(0)[p], x.plane(1)[p], x.plane(2)[p]];
            let raw = self.lookup_raw(rgb);
            let g: [f64; 3] = std::array::from_fn(|ch| {
                if (0.0..=1.0).contains(&raw[ch]) {
                    upstream[ch * n + p]
                } else {
                    0.0
                }
            });
            if g == [0.0; 3] {
                continue;
            }
            let cell = self.cell(rgb);
            for corner in &cell.corners {
                let mut along = 0.0;
                for ch in 0..3 {
                    params[corner.offset + ch] += corner.weight * g[ch];
                    along += g[ch] * self.params[corner.offset + ch];
                }
                for a in 0..3 {
                    input[a * n + p] += along * corner.dweight[a] * cell.scale[a];
                }
            }
        }
        HeadGrad { params, input }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_lut_is_passthrough() {
        let lut = Lut3dHead::identity(9);
        let x = RgbImage::from_fn(5, 7, |y, x| {
            [y as f64 / 4.0, x as f64 / 6.0, ((x * y) % 5) as f64 / 4.3]
        });
        let out = lut.forward(&x);
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn lattice_points_return_entries() {
        let mut lut = Lut3dHead::identity(5);
        lut.set_entry(1, 3, 2, [0.9, 0.1, 0.4]);
        assert_eq!(lut.lookup([0.25, 0.75, 0.5]), [0.9, 0.1, 0.4]);
        assert_eq!(lut.lookup([1.0, 1.0, 1.0]), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn parameter_gradient_is_weight_scatter() {
        let lut = Lut3dHead::identity(3);
        let x = RgbImage::filled(1, 1, [0.25, 0.5, 0.75]);
        let g = lut.backward(&x, &[1.0, 0.0, 0.0]);
        // weights of the 8 corners sum to one and land on R outputs only
        let r_total: f64 = g.params.iter().step_by(3).sum();
        assert!((r_total - 1.0).abs() < 1e-12);
        assert!(g.params.iter().skip(1).step_by(3).all(|v| *v == 0.0));
        // identity lattice: ∂out_R / ∂in_R = 1
        assert!((g.input[0] - 1.0).abs() < 1e-12);
        assert!(g.input[1].abs() < 1e-12 && g.input[2].abs() < 1e-12);
    }

    #[test]
    fn project_clamps_entries() {
        let mut lut = Lut3dHead::identity(2);
        lut.set_entry(0, 0, 0, [-0.3, 1.4, 0.5]);
        lut.project();
        assert_eq!(lut.entry(0, 0, 0), [0.0, 1.0, 0.5]);
    }
}
