//! Forward-only implementation of a late-fusion interactive segmentation
//! network.
//!
//! RGB features come from a frozen, black-box vision transformer (see
//! [`backbone`]), are lifted into a stride 4/8/16/32 pyramid by
//! [`fpn::ParallelFpn`], and fused with any number of extra modalities by
//! [`fuser::MmFuser`]. Everything up to that point runs once per image. Each
//! click then only re-runs [`patch_embed::MsPatchEmbed`] on the interaction
//! tensor and [`csnet::CsNet`].
//!
//! Weights are seeded random; there is no training code.

pub mod attention;
pub mod backbone;
pub mod csnet;
pub mod encoder;
pub mod fpn;
pub mod fuser;
pub mod init;
pub mod model;
pub mod ops;
pub mod patch_embed;
mod tensor;

pub use backbone::{BackboneFeatures, FeatureArchive, FeatureProvider, StubBackbone, StubBackboneConfig};
pub use fpn::{FeaturePyramid, FpnConfig, InverseParallelFpn, ParallelFpn};
pub use model::{CallCounts, MmmsNet, NetConfig, PreparedImage};
pub use tensor::Tensor3;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what}: {}x{} is not divisible by {divisor}", size.0, size.1)]
    Indivisible { what: String, size: (usize, usize), divisor: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no precomputed features for image {0:?}")]
    MissingFeatures(String),
    #[error("feature archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
