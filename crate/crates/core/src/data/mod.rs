//! Two-domain synthetic shape/texture data, its oracles, and image IO.

mod batches;
pub mod netpbm;
mod oracles;
mod synthetic;

pub use batches::{batch_iter, gather, BatchStream};
pub use oracles::{
    shape_centroid, texture_score, BACKGROUND, BAND_CONCENTRATION, FOREGROUND_THRESHOLD, ORACLE_VERSION,
    STRIPE_BAND_WIDTH, TEXTURE_BAND_HI, TEXTURE_BAND_LO,
};
pub use synthetic::{
    gen_domain, render, DatasetPair, GroundTruth, ImageDataset, Range, ShapeKind, SyntheticSpec, TextureKind, SIDECAR,
};
