//! Benchmark engine for click-based interactive segmentation of several
//! adjacent surfaces per image.
//!
//! The crate covers mask algebra and the joint label map ([`mask`]), the
//! automatic click simulator ([`clicksim`]), the single- and multi-surface
//! evaluation loops ([`eval`]), pluggable predictors ([`predictor`]), dataset
//! IO ([`dataset`]), reports ([`report`]) and an HTTP annotation service
//! ([`service`]). The forward-only network lives in the `mmms-nn` crate.

pub mod cli;
pub mod clicksim;
pub mod dataset;
pub mod mask;
pub mod eval;
pub mod predictor;
pub mod report;
pub mod service;

pub use mask::{iou, BinaryMask, Click, JointMask, MaskError, Polarity, RleMask};
