use crate::error::{Error, Result};

macro_rules! planar3 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            height: usize,
            width: usize,
            data: Vec<f64>,
        }

        impl $name {
            /// Builds an image from planar data (`3 × height × width`).
            pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
                if data.len() != 3 * height * width {
                    return Err(Error::Shape(format!(
                        "expected {} values for 3x{height}x{width}, got {}",
                        3 * height * width,
                        data.len()
                    )));
                }
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Range("image contains non-finite values".into()));
                }
                Ok(Self { height, width, data })
            }

            pub fn zeros(height: usize, width: usize) -> Self {
                Self { height, width, data: vec![0.0; 3 * height * width] }
            }

            pub fn filled(height: usize, width: usize, value: [f64; 3]) -> Self {
                Self::from_fn(height, width, |_, _| value)
            }

            pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
                let n = height * width;
                let mut data = vec![0.0; 3 * n];
                for y in 0..height {
                    for x in 0..width {
                        let v = f(y, x);
                        for c in 0..3 {
                            data[c * n + y * width + x] = v[c];
                        }
                    }
                }
                Self { height, width, data }
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            /// Number of pixels per plane.
            pub fn pixel_count(&self) -> usize {
                self.height * self.width
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<f64> {
                self.data
            }

            pub fn plane(&self, c: usize) -> &[f64] {
                let n = self.pixel_count();
                &self.data[c * n..(c + 1) * n]
            }

            pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
                let n = self.pixel_count();
                &mut self.data[c * n..(c + 1) * n]
            }

            #[inline]
            pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
                self.data[c * self.height * self.width + y * self.width + x]
            }

            #[inline]
            pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
                let n = self.height * self.width;
                self.data[c * n + y * self.width + x] = v;
            }

            pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
                [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
            }

            pub fn same_shape(&self, other: &Self) -> bool {
                self.height == other.height && self.width == other.width
            }

            /// Copies the `h × w` window whose top-left corner is `(y0, x0)`.
            pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
                if y0 + h > self.height || x0 + w > self.width {
                    return Err(Error::Shape(format!(
                        "crop {h}x{w}+{y0}+{x0} exceeds {}x{}",
                        self.height, self.width
                    )));
                }
                Ok(Self::from_fn(h, w, |y, x| self.pixel(y0 + y, x0 + x)))
            }
        }
    };
}

planar3!(
    /// Planar three-channel RGB image; values nominally in `[0, 1]`.
    RgbImage
);
planar3!(
    /// Planar Y, U, V image. Y in `[0, 1]`, U and V in `[-0.5, 0.5]`.
    YuvImage
);
planar3!(
    /// Planar CIE L*, a*, b* image.
    LabImage
);

impl RgbImage {
    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn clamped(mut self) -> Self {
        self.clamp01();
        self
    }
}

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;
/// `U = U_SCALE · (B − Y)`, maps the chroma axis into `[-0.5, 0.5]`.
pub const U_SCALE: f64 = 0.5 / (1.0 - LUMA_B);
/// `V = V_SCALE · (R − Y)`.
pub const V_SCALE: f64 = 0.5 / (1.0 - LUMA_R);

#[inline]
pub fn rgb_to_yuv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = LUMA_R * r + LUMA_G * g + LUMA_B * b;
    [y, U_SCALE * (b - y), V_SCALE * (r - y)]
}

#[inline]
pub fn yuv_to_rgb_pixel([y, u, v]: [f64; 3]) -> [f64; 3] {
    let r = y + v / V_SCALE;
    let b = y + u / U_SCALE;
    let g = (y - LUMA_R * r - LUMA_B * b) / LUMA_G;
    [r, g, b]
}

/// Full-range BT.601 luma with chroma scaled into `[-0.5, 0.5]`.
pub fn rgb_to_yuv(img: &RgbImage) -> YuvImage {
    let n = img.pixel_count();
    let mut data = vec![0.0; 3 * n];
    for p in 0..n {
        let yuv = rgb_to_yuv_pixel([img.data[p], img.data[n + p], img.data[2 * n + p]]);
        for c in 0..3 {
            data[c * n + p] = yuv[c];
        }
    }
    YuvImage {
        height: img.height,
        width: img.width,
        data,
    }
}

pub fn yuv_to_rgb(img: &YuvImage) -> RgbImage {
    let n = img.pixel_count();
    let mut data = vec![0.0; 3 * n];
    for p in 0..n {
        let rgb = yuv_to_rgb_pixel([img.data[p], img.data[n + p], img.data[2 * n + p]]);
        for c in 0..3 {
            data[c * n + p] = rgb[c];
        }
    }
    RgbImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// sRGB (IEC 61966-2-1) electro-optical transfer function.
#[inline]
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const fn row_sum(r: [f64; 3]) -> f64 {
    r[0] + r[1] + r[2]
}

/// D65 white in the same units as [`SRGB_TO_XYZ`] (its row sums), so sRGB
/// white lands exactly on the neutral axis.
const WHITE_D65: [f64; 3] = [
    row_sum(SRGB_TO_XYZ[0]),
    row_sum(SRGB_TO_XYZ[1]),
    row_sum(SRGB_TO_XYZ[2]),
];

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub fn srgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.pixel_count();
    let mut data = vec![0.0; 3 * n];
    for p in 0..n {
        let lab = srgb_to_lab_pixel([img.data[p], img.data[n + p], img.data[2 * n + p]]);
        for c in 0..3 {
            data[c * n + p] = lab[c];
        }
    }
    LabImage {
        height: img.height,
        width: img.width,
        data,
    }
}
