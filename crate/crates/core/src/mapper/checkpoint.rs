//! Head checkpoint: `u32 LE` header length, UTF-8 JSON header, then every
//! parameter as `f32 LE` in [`Head::params`] order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::head::{Head, HeadSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub head_type: String,
    pub spec: HeadSpec,
    pub shapes: Vec<Vec<usize>>,
    pub param_count: usize,
    pub seed: u64,
    /// Last completed training stage (0 for an untrained head).
    pub stage: u8,
}

pub fn write_checkpoint<W: Write>(head: &Head, seed: u64, stage: u8, mut out: W) -> Result<()> {
    let spec = head.spec();
    let header = CheckpointHeader {
        head_type: spec.name(),
        shapes: spec.shapes(),
        param_count: head.param_count(),
        spec,
        seed,
        stage,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(4 + json.len() + 4 * header.param_count);
    buf.extend((json.len() as u32).to_le_bytes());
    buf.extend(json);
    for p in head.params() {
        buf.extend((p as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(CheckpointHeader, Head)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let len_bytes: [u8; 4] = bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Format("checkpoint truncated before header length".into()))?;
    let hlen = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(4..4 + hlen)
        .ok_or_else(|| Error::Format("checkpoint truncated inside header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    header.spec.validate()?;
    if header.spec.param_count() != header.param_count || header.spec.shapes() != header.shapes {
        return Err(Error::Format(format!(
            "checkpoint header inconsistent with `{}` architecture",
            header.spec
        )));
    }
    let blob = &bytes[4 + hlen..];
    if blob.len() != 4 * header.param_count {
        return Err(Error::Format(format!(
            "checkpoint blob has {} bytes, expected {}",
            blob.len(),
            4 * header.param_count
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut head = header.spec.build(header.seed)?;
    head.set_params(&params)?;
    Ok((header, head))
}

pub fn save_checkpoint(head: &Head, seed: u64, stage: u8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(head, seed, stage, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Head)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
