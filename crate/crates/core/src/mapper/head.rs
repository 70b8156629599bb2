use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ccm::CcmHead;
use super::cnn::{ResidualCnnHead, DEFAULT_HIDDEN};
use super::lut::{Lut3dHead, DEFAULT_LUT_SIZE};
use crate::error::{Error, Result};
use crate::imgcore::RgbImage;

/// Gradients of a scalar loss with respect to the head parameters (flat,
/// in [`Head::params`] order) and to the input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Architecture of a head, enough to rebuild it before loading parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HeadSpec {
    Ccm,
    Lut3d {
        size: usize,
    },
    ResidualCnn {
        hidden: usize,
    },
    /// Applied left to right.
    Chain {
        heads: Vec<HeadSpec>,
    },
}

impl HeadSpec {
    pub fn name(&self) -> String {
        match self {
            HeadSpec::Ccm => "ccm".into(),
            HeadSpec::Lut3d { .. } => "lut3d".into(),
            HeadSpec::ResidualCnn { .. } => "residual_cnn".into(),
            HeadSpec::Chain { heads } => heads.iter().map(|h| h.name()).collect::<Vec<_>>().join("+"),
        }
    }

    /// Shapes of the parameter tensors, in storage order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            HeadSpec::Ccm => vec![vec![3, 3], vec![3]],
            HeadSpec::Lut3d { size } => vec![vec![size, size, size, 3]],
            HeadSpec::ResidualCnn { hidden } => vec![
                vec![hidden, 3, 3, 3],
                vec![hidden],
                vec![3, hidden, 3, 3],
                vec![3],
                vec![3, 3],
                vec![3],
            ],
            HeadSpec::Chain { ref heads } => heads.iter().flat_map(|h| h.shapes()).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HeadSpec::Ccm => Ok(()),
            HeadSpec::Lut3d { size } if *size < 2 => {
                Err(Error::Config(format!("LUT size must be >= 2, got {size}")))
            }
            HeadSpec::ResidualCnn { hidden: 0 } => Err(Error::Config("CNN hidden width must be >= 1".into())),
            HeadSpec::Chain { heads } if heads.is_empty() => Err(Error::Config("empty head chain".into())),
            HeadSpec::Chain { heads } => heads.iter().try_for_each(|h| h.validate()),
            _ => Ok(()),
        }
    }

    /// Freshly initialized head; `seed` only affects the CNN weights.
    pub fn build(&self, seed: u64) -> Result<Head> {
        self.validate()?;
        Ok(match self {
            HeadSpec::Ccm => Head::Ccm(CcmHead::identity()),
            HeadSpec::Lut3d { size } => Head::Lut3d(Lut3dHead::identity(*size)),
            HeadSpec::ResidualCnn { hidden } => Head::ResidualCnn(ResidualCnnHead::new(*hidden, seed)),
            HeadSpec::Chain { heads } => Head::Chain(
                heads
                    .iter()
                    .enumerate()
                    .map(|(i, h)| h.build(seed.wrapping_add(i as u64)))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

impl fmt::Display for HeadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses `ccm`, `lut3d[:L]`, `cnn[:hidden]` (or `residual_cnn`), joined
/// with `+` for a chain.
impl FromStr for HeadSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        if parts.len() > 1 {
            let heads = parts.iter().map(|p| p.parse()).collect::<Result<_>>()?;
            return Ok(HeadSpec::Chain { heads });
        }
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: usize| -> Result<usize> {
            arg.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| Error::Config(format!("bad head size `{a}` in `{s}`")))
            })
        };
        let spec = match name.trim() {
            "ccm" if arg.is_none() => HeadSpec::Ccm,
            "lut3d" | "lut" => HeadSpec::Lut3d {
                size: num(DEFAULT_LUT_SIZE)?,
            },
            "cnn" | "residual_cnn" => HeadSpec::ResidualCnn {
                hidden: num(DEFAULT_HIDDEN)?,
            },
            _ => return Err(Error::Config(format!("unknown head `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A color-mapping head. All variants map `[0, 1]` RGB to `[0, 1]` RGB with
/// the same spatial size.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Ccm(CcmHead),
    Lut3d(Lut3dHead),
    ResidualCnn(ResidualCnnHead),
    Chain(Vec<Head>),
}

impl Head {
    pub fn spec(&self) -> HeadSpec {
        match self {
            Head::Ccm(_) => HeadSpec::Ccm,
            Head::Lut3d(h) => HeadSpec::Lut3d { size: h.size() },
            Head::ResidualCnn(h) => HeadSpec::ResidualCnn { hidden: h.hidden() },
            Head::Chain(hs) => HeadSpec::Chain {
                heads: hs.iter().map(Head::spec).collect(),
            },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Head::Ccm(h) => h.params().len(),
            Head::Lut3d(h) => h.params().len(),
            Head::ResidualCnn(h) => h.params().len(),
            Head::Chain(hs) => hs.iter().map(Head::param_count).sum(),
        }
    }

    /// Flat copy of all parameters.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Head::Ccm(h) => h.params().to_vec(),
            Head::Lut3d(h) => h.params().to_vec(),
            Head::ResidualCnn(h) => h.params().to_vec(),
            Head::Chain(hs) => hs.iter().flat_map(Head::params).collect(),
        }
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters supplied for a head with {}",
                values.len(),
                self.param_count()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameter {v}")));
        }
        match self {
            Head::Ccm(h) => h.params_mut().copy_from_slice(values),
            Head::Lut3d(h) => h.params_mut().copy_from_slice(values),
            Head::ResidualCnn(h) => h.params_mut().copy_from_slice(values),
            Head::Chain(hs) => {
                let mut off = 0;
                for h in hs {
                    let n = h.param_count();
                    h.set_params(&values[off..off + n])?;
                    off += n;
                }
            }
        }
        Ok(())
    }

    /// Restores parameter constraints after an optimizer step.
    pub fn project(&mut self) {
        match self {
            Head::Lut3d(h) => h.project(),
            Head::Chain(hs) => hs.iter_mut().for_each(Head::project),
            _ => {}
        }
    }

    pub fn forward(&self, x: &RgbImage) -> RgbImage {
        match self {
            Head::Ccm(h) => h.forward(x),
            Head::Lut3d(h) => h.forward(x),
            Head::ResidualCnn(h) => h.forward(x),
            Head::Chain(hs) => {
                let mut cur = x.clone();
                for h in hs {
                    cur = h.forward(&cur);
                }
                cur
            }
        }
    }

    /// Backpropagates `upstream` (∂loss/∂forward(x), laid out like the image
    /// data) to the parameters and the input.
    pub fn backward(&self, x: &RgbImage, upstream: &[f64]) -> Result<HeadGrad> {
        if upstream.len() != x.data().len() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, image has {}",
                upstream.len(),
                x.data().len()
            )));
        }
        Ok(self.backward_unchecked(x, upstream))
    }

    fn backward_unchecked(&self, x: &RgbImage, upstream: &[f64]) -> HeadGrad {
        match self {
            Head::Ccm(h) => h.backward(x, upstream),
            Head::Lut3d(h) => h.backward(x, upstream),
            Head::ResidualCnn(h) => h.backward(x, upstream),
            Head::Chain(hs) => {
                let mut inputs = Vec::with_capacity(hs.len());
                let mut cur = x.clone();
                for h in hs {
                    let next = h.forward(&cur);
                    inputs.push(cur);
                    cur = next;
                }
                let mut g = upstream.to_vec();
                let mut parts = Vec::with_capacity(hs.len());
                for (h, inp) in hs.iter().zip(&inputs).rev() {
                    let hg = h.backward_unchecked(inp, &g);
                    g = hg.input;
                    parts.push(hg.params);
                }
                parts.reverse();
                HeadGrad {
                    params: parts.concat(),
                    input: g,
                }
            }
        }
    }
}
