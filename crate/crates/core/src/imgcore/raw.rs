use crate::error::{Error, Result};

/// Largest valid 10-bit sensor sample.
pub const RAW_MAX: u16 = 1023;

/// Channel order of a packed RGGB patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BayerChannel {
    R = 0,
    Gr = 1,
    Gb = 2,
    B = 3,
}

/// A packed RGGB sensor patch: `height × width × 4` samples stored
/// row-major with the channel index fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPatch {
    height: usize,
    width: usize,
    samples: Vec<u16>,
}

impl RawPatch {
    pub fn new(height: usize, width: usize, samples: Vec<u16>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Shape(format!(
                "raw patch must be at least 2x2, got {height}x{width}"
            )));
        }
        if samples.len() != height * width * 4 {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x4, got {}",
                height * width * 4,
                samples.len()
            )));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| **s > RAW_MAX) {
            return Err(Error::Range(format!(
                "sample {i} is {s}, above the 10-bit maximum {RAW_MAX}"
            )));
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn filled(height: usize, width: usize, value: [u16; 4]) -> Result<Self> {
        let samples = (0..height * width).flat_map(|_| value).collect();
        Self::new(height, width, samples)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, channel: BayerChannel, y: usize, x: usize) -> u16 {
        self.samples[(y * self.width + x) * 4 + channel as usize]
    }

    /// Multiplies every sample by `k` and rounds down, keeping the result valid.
    pub fn scaled(&self, k: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|&s| ((s as f64 * k).floor().clamp(0.0, RAW_MAX as f64)) as u16)
            .collect();
        Self {
            height: self.height,
            width: self.width,
            samples,
        }
    }
}

/// Parses a little-endian u16 buffer into a [`RawPatch`].
pub fn decode_raw(bytes: &[u8], height: usize, width: usize) -> Result<RawPatch> {
    let expected = height * width * 4 * 2;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raw buffer has {} bytes, expected {expected} for {height}x{width}x4 u16",
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    RawPatch::new(height, width, samples)
}

pub fn encode_raw(patch: &RawPatch) -> Vec<u8> {
    patch.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}
