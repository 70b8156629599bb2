//! Image and tensor types, color conversions and file containers.

mod container;
mod image;
mod io;
mod raw;

pub use self::container::{
    read_embeddings, read_feature_maps, write_embeddings, write_feature_maps, EmbeddingRecord, EmbeddingSet,
    FeatureMap, FeatureMapSet, EMB_MAGIC, FMP_MAGIC,
};
pub use self::image::{
    rgb_to_lab, rgb_to_yuv, rgb_to_yuv_pixel, srgb_to_lab_pixel, srgb_to_linear, yuv_to_rgb,
    yuv_to_rgb_pixel, LabImage, RgbImage, YuvImage, LUMA_B, LUMA_G, LUMA_R, U_SCALE, V_SCALE,
};
pub use self::io::{load_raw, load_rgb, save_png, save_raw, to_rgb8, RawDims};
pub use self::raw::{decode_raw, encode_raw, BayerChannel, RawPatch, RAW_MAX};
