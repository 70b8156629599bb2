//! Color-mapping heads with hand-derived gradients, AdamW and the two-stage
//! training loop over sampled pseudo-pairs.

mod ccm;
mod checkpoint;
mod cnn;
mod head;
mod lut;
mod optim;
mod train;

pub use ccm::CcmHead;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use cnn::{ResidualCnnHead, DEFAULT_HIDDEN};
pub use head::{Head, HeadGrad, HeadSpec};
pub use lut::{Lut3dHead, DEFAULT_LUT_SIZE};
pub use optim::{AdamW, AdamWConfig};
pub use train::{infer, train, EpochLoss, LrSchedule, StageConfig, TrainConfig, TrainReport};
