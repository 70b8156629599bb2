//! Binary containers for externally extracted descriptors.
//!
//! `EMB1` holds named dense vectors of one shared dimension. `FMP1` holds
//! named feature tensors, one record per `(name, layer)`. Both use a
//! 16-byte little-endian header:
//!
//! ```text
//! magic[4] | version u32 = 1 | count u32 | dim u32
//! ```
//!
//! EMB1 records are `name_len u16 | name utf-8 | dim × f32`. FMP1 records are
//! `name_len u16 | name utf-8 | layer u16 | C u16 | H u16 | W u16 | C·H·W × f32`
//! and the header `dim` field is always 0.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const FMP_MAGIC: &[u8; 4] = b"FMP1";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub name: String,
    pub vector: Vec<f32>,
}

/// Named vectors of a single dimension, names unique.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "record `{}` has dimension {}, expected {dim}",
                    r.name,
                    r.vector.len()
                )));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Range(format!("record `{}` is not finite", r.name)));
            }
            if index.insert(r.name.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate record name `{}`", r.name)));
            }
        }
        Ok(Self { dim, records, index })
    }

    pub fn from_pairs<I, S>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let records = pairs
            .into_iter()
            .map(|(name, vector)| EmbeddingRecord {
                name: name.into(),
                vector,
            })
            .collect();
        Self::new(dim, records)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.index.get(name).map(|&i| self.records[i].vector.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(EMB_MAGIC, self.records.len(), self.dim);
        for r in &self.records {
            push_name(&mut out, &r.name);
            r.vector
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let (count, dim) = cur.header(EMB_MAGIC)?;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = cur.name()?;
            let vector = cur.f32s(dim)?;
            records.push(EmbeddingRecord { name, vector });
        }
        cur.finish()?;
        Self::new(dim, records)
    }
}

/// One activation tensor `C × H × W` for a named image at a given layer tap.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub name: String,
    pub layer: u16,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        name: impl Into<String>,
        layer: u16,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map `{name}` layer {layer}: {} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range(format!("feature map `{name}` is not finite")));
        }
        Ok(Self {
            name,
            layer,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
}

/// Feature maps stored in memory at f64; the container stores f32.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureMapSet {
    maps: Vec<FeatureMap>,
}

impl FeatureMapSet {
    pub fn new(maps: Vec<FeatureMap>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &maps {
            if !seen.insert((m.name.as_str(), m.layer)) {
                return Err(Error::Format(format!(
                    "duplicate feature map `{}` layer {}",
                    m.name, m.layer
                )));
            }
            for (dim, what) in [(m.channels, "C"), (m.height, "H"), (m.width, "W")] {
                if dim > u16::MAX as usize {
                    return Err(Error::Range(format!("{what}={dim} does not fit in u16")));
                }
            }
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut [FeatureMap] {
        &mut self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// All layers recorded for one image name, in file order.
    pub fn for_name(&self, name: &str) -> FeatureMapSet {
        FeatureMapSet {
            maps: self.maps.iter().filter(|m| m.name == name).cloned().collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(FMP_MAGIC, self.maps.len(), 0);
        for m in &self.maps {
            push_name(&mut out, &m.name);
            for v in [m.layer as usize, m.channels, m.height, m.width] {
                out.extend_from_slice(&(v as u16).to_le_bytes());
            }
            m.data
                .iter()
                .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let (count, dim) = cur.header(FMP_MAGIC)?;
        if dim != 0 {
            return Err(Error::Format(format!(
                "FMP1 header dim field must be 0, got {dim}"
            )));
        }
        let mut maps = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = cur.name()?;
            let layer = cur.u16()?;
            let c = cur.u16()? as usize;
            let h = cur.u16()? as usize;
            let w = cur.u16()? as usize;
            let data = cur.f32s(c * h * w)?.into_iter().map(f64::from).collect();
            maps.push(FeatureMap::new(name, layer, c, h, w, data)?);
        }
        cur.finish()?;
        Self::new(maps)
    }
}

fn header(magic: &[u8; 4], count: usize, dim: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(magic);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out
}

fn push_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated container: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(usize, usize)> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok((self.u32()? as usize, self.u32()? as usize))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Format(format!("record name: {e}")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("record size overflows".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last record",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSet::from_bytes(&bytes)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_maps(path: impl AsRef<Path>) -> Result<FeatureMapSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMapSet::from_bytes(&bytes)
}

pub fn write_feature_maps(set: &FeatureMapSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}
