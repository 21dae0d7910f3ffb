//! Adapters between the foundation model's single-resolution token grids and
//! a four-level feature pyramid at strides 4, 8, 16 and 32.
//!
//! Each scaling module is a straight feed-forward list of layers. Resizes are
//! bilinear, convolutions use "same" padding, and the normalisations are
//! single-group group norms (statistics over the whole map).

use std::fmt;

use crate::backbone::{check_divisible, BackboneFeatures};
use crate::init::ParamInit;
use crate::ops::{gelu_inplace, interpolate_bilinear, Conv2d, GroupNorm1};
use crate::{NnError, Tensor3};

pub const STRIDES: [usize; 4] = [4, 8, 16, 32];
pub const DEFAULT_EMBED_DIMS: [usize; 4] = [64, 128, 320, 512];

/// Four maps at strides 4/8/16/32, level `i` shaped `(H/s_i, W/s_i, C_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [Tensor3; 4],
}

impl FeaturePyramid {
    pub fn shapes(&self) -> [(usize, usize, usize); 4] {
        [0, 1, 2, 3].map(|i| self.levels[i].shape())
    }

    pub fn validate(&self, height: usize, width: usize, dims: &[usize; 4]) -> Result<(), NnError> {
        for (i, level) in self.levels.iter().enumerate() {
            let s = STRIDES[i];
            level.ensure_shape((height / s, width / s, dims[i]), &format!("pyramid level stride {s}"))?;
        }
        Ok(())
    }

    /// Image size implied by the stride-4 level.
    pub fn image_size(&self) -> (usize, usize) {
        (self.levels[0].height() * 4, self.levels[0].width() * 4)
    }

    pub fn dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.levels[i].channels())
    }

    pub fn add(&self, other: &FeaturePyramid) -> Result<FeaturePyramid, NnError> {
        Ok(FeaturePyramid {
            levels: [
                self.levels[0].add(&other.levels[0])?,
                self.levels[1].add(&other.levels[1])?,
                self.levels[2].add(&other.levels[2])?,
                self.levels[3].add(&other.levels[3])?,
            ],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(Tensor3::is_finite)
    }

    pub fn fingerprint(&self) -> u64 {
        self.levels.iter().fold(0u64, |acc, l| acc.rotate_left(17) ^ l.fingerprint())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FpnConfig {
    pub d_fm: usize,
    pub patch_size: usize,
    pub embed_dims: [usize; 4],
}

impl FpnConfig {
    pub fn new(d_fm: usize, patch_size: usize) -> Self {
        Self { d_fm, patch_size, embed_dims: DEFAULT_EMBED_DIMS }
    }

    /// Hidden widths per level:
    /// `max(2 e4, d/2)`, `max(e8, d/2)`, `max(e16, d)`, `max(e32, 2 d)`.
    pub fn hidden_dims(&self) -> [usize; 4] {
        let d = self.d_fm;
        let e = self.embed_dims;
        [(2 * e[0]).max(d / 2), e[1].max(d / 2), e[2].max(d), e[3].max(2 * d)]
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.d_fm == 0 || self.patch_size == 0 || self.embed_dims.contains(&0) {
            return Err(NnError::Config(format!("degenerate pyramid config {self:?}")));
        }
        if !self.hidden_dims()[0].is_multiple_of(2) {
            return Err(NnError::Config("stride-4 hidden width must be even".into()));
        }
        Ok(())
    }
}

/// Resize target, resolved against the image size at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeTo {
    /// `(H / s, W / s)`
    Stride(usize),
    /// `(H / P, W / P)`, the backbone token grid.
    PatchGrid,
}

#[derive(Clone, Debug)]
pub enum ScaleLayer {
    Interpolate(ResizeTo),
    Conv(Conv2d),
    Norm(GroupNorm1),
    Gelu,
}

impl fmt::Display for ScaleLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleLayer::Interpolate(ResizeTo::Stride(s)) => write!(f, "Interpolate(H/{s}, W/{s})"),
            ScaleLayer::Interpolate(ResizeTo::PatchGrid) => write!(f, "Interpolate(H/P, W/P)"),
            ScaleLayer::Conv(c) => write!(f, "Conv({}, {}, k={}, s={})", c.in_dim, c.out_dim, c.kernel, c.stride),
            ScaleLayer::Norm(n) => write!(f, "LayerNormalization({})", n.dim),
            ScaleLayer::Gelu => write!(f, "GELU"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScaleModule {
    pub layers: Vec<ScaleLayer>,
}

impl ScaleModule {
    pub fn describe(&self) -> Vec<String> {
        self.layers.iter().map(ToString::to_string).collect()
    }

    fn forward(&self, x: &Tensor3, image: (usize, usize), patch: usize) -> Result<Tensor3, NnError> {
        let mut x = x.clone();
        for layer in &self.layers {
            x = match layer {
                ScaleLayer::Interpolate(target) => {
                    let div = match target {
                        ResizeTo::Stride(s) => *s,
                        ResizeTo::PatchGrid => patch,
                    };
                    interpolate_bilinear(&x, image.0 / div, image.1 / div)?
                }
                ScaleLayer::Conv(c) => c.forward(&x)?,
                ScaleLayer::Norm(n) => n.forward(&x)?,
                ScaleLayer::Gelu => {
                    gelu_inplace(&mut x);
                    x
                }
            };
        }
        Ok(x)
    }

    /// The final projection (last convolution) of the module.
    pub fn last_conv_mut(&mut self) -> Option<&mut Conv2d> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            ScaleLayer::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// The normalisation directly following the final projection.
    pub fn last_norm_mut(&mut self) -> Option<&mut GroupNorm1> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            ScaleLayer::Norm(n) => Some(n),
            _ => None,
        })
    }
}

use ScaleLayer::{Gelu, Interpolate, Norm};

fn conv(init: &mut ParamInit, i: usize, o: usize, k: usize) -> ScaleLayer {
    ScaleLayer::Conv(Conv2d::same(init, i, o, k))
}

fn norm(d: usize) -> ScaleLayer {
    Norm(GroupNorm1::new(d))
}

/// Token grids -> feature pyramid, one scaling module per level.
#[derive(Clone, Debug)]
pub struct ParallelFpn {
    pub cfg: FpnConfig,
    pub scales: [ScaleModule; 4],
}

impl ParallelFpn {
    pub fn new(init: &mut ParamInit, cfg: FpnConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let d = cfg.d_fm;
        let e = cfg.embed_dims;
        let h = cfg.hidden_dims();
        let scale4 = ScaleModule {
            layers: vec![
                Interpolate(ResizeTo::Stride(8)),
                conv(init, d, h[0], 3),
                norm(h[0]),
                Gelu,
                Interpolate(ResizeTo::Stride(4)),
                conv(init, h[0], h[0] / 2, 3),
                norm(h[0] / 2),
                conv(init, h[0] / 2, e[0], 1),
                norm(e[0]),
                Gelu,
            ],
        };
        let scale8 = ScaleModule {
            layers: vec![
                Interpolate(ResizeTo::Stride(8)),
                conv(init, d, h[1], 3),
                norm(h[1]),
                conv(init, h[1], e[1], 1),
                norm(e[1]),
                Gelu,
            ],
        };
        let scale16 = ScaleModule {
            layers: vec![
                conv(init, d, h[2], 3),
                Interpolate(ResizeTo::Stride(16)),
                norm(h[2]),
                conv(init, h[2], e[2], 1),
                norm(e[2]),
                Gelu,
            ],
        };
        let scale32 = ScaleModule {
            layers: vec![
                conv(init, d, h[3], 3),
                Interpolate(ResizeTo::Stride(32)),
                norm(h[3]),
                conv(init, h[3], e[3], 1),
                norm(e[3]),
                Gelu,
            ],
        };
        Ok(Self { cfg, scales: [scale4, scale8, scale16, scale32] })
    }

    pub fn forward(&self, features: &BackboneFeatures) -> Result<FeaturePyramid, NnError> {
        features.validate()?;
        if features.embed_dim != self.cfg.d_fm || features.patch_size != self.cfg.patch_size {
            return Err(NnError::Shape(format!(
                "features are d={} P={}, pyramid adapter expects d={} P={}",
                features.embed_dim, features.patch_size, self.cfg.d_fm, self.cfg.patch_size
            )));
        }
        let image = (features.image_height, features.image_width);
        check_divisible(image.0, image.1, 32, "pyramid resolution")?;
        let run = |i: usize| self.scales[i].forward(&features.taps[i], image, self.cfg.patch_size);
        let pyramid = FeaturePyramid { levels: [run(0)?, run(1)?, run(2)?, run(3)?] };
        pyramid.validate(image.0, image.1, &self.cfg.embed_dims)?;
        Ok(pyramid)
    }
}

/// Feature pyramid -> token-grid shaped tensors. Restores shapes only; it is
/// a second learned adapter, not an algebraic inverse.
#[derive(Clone, Debug)]
pub struct InverseParallelFpn {
    pub cfg: FpnConfig,
    pub scales: [ScaleModule; 4],
}

impl InverseParallelFpn {
    pub fn new(init: &mut ParamInit, cfg: FpnConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let d = cfg.d_fm;
        let e = cfg.embed_dims;
        let h = cfg.hidden_dims();
        let scale4 = ScaleModule {
            layers: vec![
                Interpolate(ResizeTo::Stride(8)),
                conv(init, e[0], h[0] / 2, 3),
                norm(h[0] / 2),
                Gelu,
                Interpolate(ResizeTo::PatchGrid),
                conv(init, h[0] / 2, h[0], 3),
                norm(h[0]),
                conv(init, h[0], d, 1),
                norm(d),
                Gelu,
            ],
        };
        let scale8 = ScaleModule {
            layers: vec![
                Interpolate(ResizeTo::PatchGrid),
                conv(init, e[1], h[1], 3),
                norm(h[1]),
                conv(init, h[1], d, 1),
                norm(d),
                Gelu,
            ],
        };
        let scale16 = ScaleModule {
            layers: vec![
                conv(init, e[2], h[2], 3),
                Interpolate(ResizeTo::PatchGrid),
                norm(h[2]),
                conv(init, h[2], d, 1),
                norm(d),
                Gelu,
            ],
        };
        let scale32 = ScaleModule {
            layers: vec![
                Interpolate(ResizeTo::PatchGrid),
                conv(init, e[3], h[3], 3),
                norm(h[3]),
                conv(init, h[3], d, 1),
                norm(d),
                Gelu,
            ],
        };
        Ok(Self { cfg, scales: [scale4, scale8, scale16, scale32] })
    }

    pub fn forward(&self, pyramid: &FeaturePyramid) -> Result<BackboneFeatures, NnError> {
        let (h, w) = pyramid.image_size();
        pyramid.validate(h, w, &self.cfg.embed_dims)?;
        check_divisible(h, w, self.cfg.patch_size, "backbone patch size")?;
        let mut taps = Vec::with_capacity(4);
        for (scale, level) in self.scales.iter().zip(&pyramid.levels) {
            taps.push(scale.forward(level, (h, w), self.cfg.patch_size)?);
        }
        let features = BackboneFeatures {
            taps,
            patch_size: self.cfg.patch_size,
            embed_dim: self.cfg.d_fm,
            image_height: h,
            image_width: w,
        };
        features.validate()?;
        Ok(features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(cfg: &FpnConfig, size: usize, seed: u64) -> BackboneFeatures {
        let mut init = ParamInit::new(seed);
        let g = size / cfg.patch_size;
        BackboneFeatures {
            taps: (0..4).map(|_| Tensor3::new(g, g, cfg.d_fm, init.normal(g * g * cfg.d_fm, 1.0)).unwrap()).collect(),
            patch_size: cfg.patch_size,
            embed_dim: cfg.d_fm,
            image_height: size,
            image_width: size,
        }
    }

    #[test]
    fn hidden_dims_for_vit_base() {
        assert_eq!(FpnConfig::new(768, 16).hidden_dims(), [384, 384, 768, 1536]);
        // ViT-S width: the embed floor dominates at strides 4, 8 and 16
        assert_eq!(FpnConfig::new(384, 16).hidden_dims(), [192, 192, 384, 768]);
        assert_eq!(FpnConfig::new(64, 8).hidden_dims(), [128, 128, 320, 512]);
    }

    #[test]
    fn scale_module_layer_lists() {
        let mut init = ParamInit::new(0);
        let fpn = ParallelFpn::new(&mut init, FpnConfig::new(768, 16)).unwrap();
        assert_eq!(
            fpn.scales[0].describe(),
            vec![
                "Interpolate(H/8, W/8)",
                "Conv(768, 384, k=3, s=1)",
                "LayerNormalization(384)",
                "GELU",
                "Interpolate(H/4, W/4)",
                "Conv(384, 192, k=3, s=1)",
                "LayerNormalization(192)",
                "Conv(192, 64, k=1, s=1)",
                "LayerNormalization(64)",
                "GELU",
            ]
        );
        assert_eq!(
            fpn.scales[3].describe(),
            vec![
                "Conv(768, 1536, k=3, s=1)",
                "Interpolate(H/32, W/32)",
                "LayerNormalization(1536)",
                "Conv(1536, 512, k=1, s=1)",
                "LayerNormalization(512)",
                "GELU",
            ]
        );
        let inv = InverseParallelFpn::new(&mut init, FpnConfig::new(768, 16)).unwrap();
        assert_eq!(inv.scales[3].describe()[0], "Interpolate(H/P, W/P)");
        assert_eq!(inv.scales[0].describe()[1], "Conv(64, 192, k=3, s=1)");
    }

    #[test]
    fn small_pyramid_shapes_and_round_trip() {
        let cfg = FpnConfig { d_fm: 24, patch_size: 8, embed_dims: [8, 16, 24, 32] };
        let mut init = ParamInit::new(1);
        let fpn = ParallelFpn::new(&mut init, cfg.clone()).unwrap();
        let inv = InverseParallelFpn::new(&mut init, cfg.clone()).unwrap();
        let f = features(&cfg, 64, 2);
        let p = fpn.forward(&f).unwrap();
        assert_eq!(p.shapes(), [(16, 16, 8), (8, 8, 16), (4, 4, 24), (2, 2, 32)]);
        let back = inv.forward(&p).unwrap();
        assert!(back.taps.iter().all(|t| t.shape() == (8, 8, 24)));
        assert_ne!(back.taps, f.taps);
    }

    #[test]
    fn zeroed_final_projection_gives_zero_levels() {
        let cfg = FpnConfig { d_fm: 16, patch_size: 8, embed_dims: [8, 8, 8, 8] };
        let mut init = ParamInit::new(1);
        let mut fpn = ParallelFpn::new(&mut init, cfg.clone()).unwrap();
        for s in &mut fpn.scales {
            s.last_conv_mut().unwrap().zero();
        }
        let p = fpn.forward(&features(&cfg, 32, 3)).unwrap();
        assert_eq!(p.shapes(), [(8, 8, 8), (4, 4, 8), (2, 2, 8), (1, 1, 8)]);
        assert!(p.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mismatched_features_rejected() {
        let cfg = FpnConfig { d_fm: 16, patch_size: 8, embed_dims: [8, 8, 8, 8] };
        let mut init = ParamInit::new(1);
        let fpn = ParallelFpn::new(&mut init, cfg).unwrap();
        let other = FpnConfig { d_fm: 12, patch_size: 8, embed_dims: [8, 8, 8, 8] };
        assert!(fpn.forward(&features(&other, 32, 0)).is_err());
    }
}
