use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HeadGrad;
use crate::imgcore::RgbImage;

pub const DEFAULT_HIDDEN: usize = 128;

/// Scale applied to the Kaiming bound of `conv2` so the untrained residual
/// branch is small and the head starts close to identity.
const CONV2_INIT_SCALE: f64 = 0.1;

/// `conv3x3(3→h) → ReLU → conv3x3(h→3) → + x → conv1x1(3→3) → clamp`,
/// replicate padding throughout.
///
/// Parameter layout: `w1 [h][3][3][3]`, `b1 [h]`, `w2 [3][h][3][3]`, `b2 [3]`,
/// `w3 [3][3]`, `b3 [3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualCnnHead {
    hidden: usize,
    params: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl Layout {
    fn new(h: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h * 27;
        let w2 = b1 + h;
        let b2 = w2 + 3 * h * 9;
        let w3 = b2 + 3;
        let b3 = w3 + 9;
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + 3,
        }
    }
}

struct Activations {
    h1: Vec<f64>,
    a1: Vec<f64>,
    r: Vec<f64>,
    pre: Vec<f64>,
}

impl ResidualCnnHead {
    pub fn param_count_for(hidden: usize) -> usize {
        Layout::new(hidden).end
    }

    /// Kaiming-uniform conv weights (ReLU gain), zero biases, identity 1×1.
    pub fn new(hidden: usize, seed: u64) -> Self {
        assert!(hidden > 0);
        let l = Layout::new(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; l.end];
        let bound1 = (6.0 / 27.0_f64).sqrt();
        let u1 = Uniform::new_inclusive(-bound1, bound1);
        params[l.w1..l.b1]
            .iter_mut()
            .for_each(|v| *v = u1.sample(&mut rng));
        let bound2 = (6.0 / (hidden * 9) as f64).sqrt() * CONV2_INIT_SCALE;
        let u2 = Uniform::new_inclusive(-bound2, bound2);
        params[l.w2..l.b2]
            .iter_mut()
            .for_each(|v| *v = u2.sample(&mut rng));
        for c in 0..3 {
            params[l.w3 + c * 3 + c] = 1.0;
        }
        Self { hidden, params }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub(crate) fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn run(&self, x: &RgbImage) -> Activations {
        let (h, w) = (x.height(), x.width());
        let n = h * w;
        let l = Layout::new(self.hidden);
        let p = &self.params;
        let h1 = conv3x3(x.data(), 3, h, w, &p[l.w1..l.b1], &p[l.b1..l.w2], self.hidden);
        let a1: Vec<f64> = h1.iter().map(|v| v.max(0.0)).collect();
        let mut r = conv3x3(&a1, self.hidden, h, w, &p[l.w2..l.b2], &p[l.b2..l.w3], 3);
        r.iter_mut().zip(x.data()).for_each(|(r, x)| *r += x);
        let mut pre = vec![0.0; 3 * n];
        for c in 0..3 {
            for i in 0..n {
                pre[c * n + i] = p[l.b3 + c]
                    + p[l.w3 + c * 3] * r[i]
                    + p[l.w3 + c * 3 + 1] * r[n + i]
                    + p[l.w3 + c * 3 + 2] * r[2 * n + i];
            }
        }
        Activations { h1, a1, r, pre }
    }

    pub fn forward(&self, x: &RgbImage) -> RgbImage {
        let pre = self.run(x).pre;
        RgbImage::new(
            x.height(),
            x.width(),
            pre.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
        .expect("finite forward")
    }

    pub fn backward(&self, x: &RgbImage, upstream: &[f64]) -> HeadGrad {
        let (h, w) = (x.height(), x.width());
        let n = h * w;
        let l = Layout::new(self.hidden);
        let p = &self.params;
        let act = self.run(x);
        let mut grads = vec![0.0; l.end];

        let gpre: Vec<f64> = upstream
            .iter()
            .zip(&act.pre)
            .map(|(g, v)| if (0.0..=1.0).contains(v) { *g } else { 0.0 })
            .collect();
        let mut gr = vec![0.0; 3 * n];
        for c in 0..3 {
            let gc = &gpre[c * n..(c + 1) * n];
            grads[l.b3 + c] = gc.iter().sum();
            for d in 0..3 {
                let rd = &act.r[d * n..(d + 1) * n];
                grads[l.w3 + c * 3 + d] = gc.iter().zip(rd).map(|(a, b)| a * b).sum();
                let wcd = p[l.w3 + c * 3 + d];
                gr[d * n..(d + 1) * n]
                    .iter_mut()
                    .zip(gc)
                    .for_each(|(o, g)| *o += wcd * g);
            }
        }

        let (gw2, gb2, mut ga1) = conv3x3_backward(&act.a1, self.hidden, h, w, &p[l.w2..l.b2], 3, &gr);
        grads[l.w2..l.b2].copy_from_slice(&gw2);
        grads[l.b2..l.w3].copy_from_slice(&gb2);
        ga1.iter_mut().zip(&act.h1).for_each(|(g, v)| {
            if *v <= 0.0 {
                *g = 0.0;
            }
        });
        let (gw1, gb1, gx) = conv3x3_backward(x.data(), 3, h, w, &p[l.w1..l.b1], self.hidden, &ga1);
        grads[l.w1..l.b1].copy_from_slice(&gw1);
        grads[l.b1..l.w2].copy_from_slice(&gb1);

        // residual path
        let input = gx.iter().zip(&gr).map(|(a, b)| a + b).collect();
        HeadGrad { params: grads, input }
    }
}

/// `c × (h+2) × (w+2)` copy with edge replication.
fn pad_replicate(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for yy in 0..ph {
            let sy = yy.saturating_sub(1).min(h - 1);
            let src = &input[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            let dst = &mut out[(ch * ph + yy) * pw..(ch * ph + yy + 1) * pw];
            dst[0] = src[0];
            dst[1..=w].copy_from_slice(src);
            dst[w + 1] = src[w - 1];
        }
    }
    out
}

/// Adjoint of [`pad_replicate`]: border gradients fold onto the edge pixels.
fn unpad_replicate_adjoint(padded: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for yy in 0..ph {
            let sy = yy.saturating_sub(1).min(h - 1);
            for xx in 0..pw {
                let sx = xx.saturating_sub(1).min(w - 1);
                out[(ch * h + sy) * w + sx] += padded[(ch * ph + yy) * pw + xx];
            }
        }
    }
    out
}

fn conv3x3(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let padded = pad_replicate(input, cin, h, w);
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        let dst = &mut out[o * h * w..(o + 1) * h * w];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &padded[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in 0..h {
                        let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        dst[y * w..(y + 1) * w]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(d, s)| *d += wv * s);
                    }
                }
            }
        }
    }
    out
}

/// Returns `(∂weights, ∂bias, ∂input)` for upstream `gout` (`cout × h × w`).
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    cout: usize,
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let padded = pad_replicate(input, cin, h, w);
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut gw = vec![0.0; cout * cin * 9];
    let mut gb = vec![0.0; cout];
    let mut gpad = vec![0.0; cin * plane];
    for o in 0..cout {
        let go = &gout[o * h * w..(o + 1) * h * w];
        gb[o] = go.iter().sum();
        for i in 0..cin {
            let src = &padded[i * plane..(i + 1) * plane];
            let gdst = &mut gpad[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let off = (y + ky) * pw + kx;
                        let grow = &go[y * w..(y + 1) * w];
                        acc += grow
                            .iter()
                            .zip(&src[off..off + w])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                        gdst[off..off + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(d, g)| *d += wv * g);
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    (gw, gb, unpad_replicate_adjoint(&gpad, cin, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        assert_eq!(ResidualCnnHead::param_count_for(128), 7055);
        assert_eq!(ResidualCnnHead::new(128, 0).params().len(), 7055);
    }

    #[test]
    fn keeps_spatial_size_and_range() {
        let head = ResidualCnnHead::new(8, 3);
        let x = RgbImage::from_fn(5, 3, |y, x| [y as f64 / 5.0, x as f64 / 3.0, 0.5]);
        let out = head.forward(&x);
        assert_eq!((out.height(), out.width()), (5, 3));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_branch_is_identity() {
        let mut head = ResidualCnnHead::new(4, 1);
        let l = Layout::new(4);
        head.params[l.w2..l.b2].iter_mut().for_each(|v| *v = 0.0);
        let x = RgbImage::from_fn(3, 3, |y, x| [0.1 * y as f64, 0.1 * x as f64, 0.7]);
        assert_eq!(head.forward(&x), x);
    }

    #[test]
    fn conv_of_constant_is_constant() {
        // replicate padding: a constant field stays constant
        let input = vec![2.0; 2 * 3 * 4];
        let weights: Vec<f64> = (0..18).map(|i| i as f64 * 0.1).collect();
        let out = conv3x3(&input, 2, 3, 4, &weights, &[0.5], 1);
        let expect = 0.5 + 2.0 * weights.iter().sum::<f64>();
        assert!(out.iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn pad_adjoint_identity() {
        // <pad(x), y> == <x, padᵀ(y)>
        let (c, h, w) = (2, 3, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * (h + 2) * (w + 2))
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = pad_replicate(&x, c, h, w)
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(unpad_replicate_adjoint(&y, c, h, w))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let head = ResidualCnnHead::new(4, 2);
        let x = RgbImage::filled(3, 3, [0.4; 3]);
        let g = head.backward(&x, &[0.0; 27]);
        assert!(g.params.iter().chain(&g.input).all(|v| *v == 0.0));
    }
}
