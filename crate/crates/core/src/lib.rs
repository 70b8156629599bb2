//! Unpaired RAW-to-RGB color mapping.
//!
//! The crate turns packed RGGB sensor patches into pseudo-RGB inputs,
//! reconstructs full images from patch streams, builds source→target
//! pseudo-pairs with entropic (fused Gromov-)Wasserstein transport, and fits
//! small color-mapping heads with statistic-matching losses.

pub mod error;
pub mod imgcore;
pub mod mapper;
pub mod numeric;
pub mod objective;
pub mod otmatch;
pub mod quality;
pub mod rawproc;
pub mod stitcher;

pub use error::{Error, Result};
