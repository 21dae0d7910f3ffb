//! Hierarchical transformer encoder in the SegFormer style: overlapping patch
//! embeddings, efficient self-attention with per-stage key/value reduction and
//! Mix-FFN blocks. Used for the non-RGB modality encoders and as the stage
//! stack inside the click segmentation network.

use crate::attention::{reduction_rate, EffAttention, MixFfn};
use crate::fpn::{FeaturePyramid, STRIDES};
use crate::init::ParamInit;
use crate::ops::{Conv2d, LayerNorm};
use crate::{NnError, Tensor3};

/// Attention heads for a stage width (64 channels per head).
pub fn heads_for(dim: usize) -> usize {
    let h = (dim / 64).max(1);
    if dim.is_multiple_of(h) {
        h
    } else {
        1
    }
}

#[derive(Clone, Debug)]
pub struct OverlapPatchEmbed {
    pub conv: Conv2d,
    pub norm: LayerNorm,
}

impl OverlapPatchEmbed {
    pub fn new(init: &mut ParamInit, in_dim: usize, out_dim: usize, kernel: usize, stride: usize) -> Self {
        Self { conv: Conv2d::new(init, in_dim, out_dim, kernel, stride, kernel / 2), norm: LayerNorm::new(out_dim) }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        self.norm.forward(&self.conv.forward(x)?)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: EffAttention,
    pub norm2: LayerNorm,
    pub ffn: MixFfn,
}

impl EncoderBlock {
    pub fn new(init: &mut ParamInit, dim: usize, reduction: usize, mlp_ratio: usize) -> Result<Self, NnError> {
        Ok(Self {
            norm1: LayerNorm::new(dim),
            attn: EffAttention::new(init, dim, heads_for(dim), reduction)?,
            norm2: LayerNorm::new(dim),
            ffn: MixFfn::new(init, dim, dim * mlp_ratio),
        })
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let h = self.norm1.forward(x)?;
        let mut x = self.attn.forward(&h, &h)?.add(x)?;
        let h = self.norm2.forward(&x)?;
        x.add_assign(&self.ffn.forward(&h)?)?;
        Ok(x)
    }
}

/// Blocks followed by a closing norm, optionally preceded by a patch embedding.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub embed: Option<OverlapPatchEmbed>,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
}

impl EncoderStage {
    pub fn new(
        init: &mut ParamInit,
        embed: Option<OverlapPatchEmbed>,
        dim: usize,
        depth: usize,
        reduction: usize,
        mlp_ratio: usize,
    ) -> Result<Self, NnError> {
        let blocks = (0..depth).map(|_| EncoderBlock::new(init, dim, reduction, mlp_ratio)).collect::<Result<_, _>>()?;
        Ok(Self { embed, blocks, norm: LayerNorm::new(dim) })
    }

    /// Patch-embeds `x` when the stage owns an embedding.
    pub fn embed(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        match &self.embed {
            Some(e) => e.forward(x),
            None => Ok(x.clone()),
        }
    }

    /// Runs the blocks and closing norm on an already embedded input.
    pub fn run_blocks(&self, x: Tensor3) -> Result<Tensor3, NnError> {
        let mut x = x;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        self.norm.forward(&x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub dims: [usize; 4],
    pub depths: [usize; 4],
    pub mlp_ratio: usize,
}

/// Four-stage encoder producing a stride 4/8/16/32 pyramid.
#[derive(Clone, Debug)]
pub struct SegFormerEncoder {
    pub cfg: EncoderConfig,
    pub stages: [EncoderStage; 4],
}

impl SegFormerEncoder {
    pub fn new(init: &mut ParamInit, cfg: EncoderConfig) -> Result<Self, NnError> {
        let mut stages = Vec::with_capacity(4);
        for (i, &level_stride) in STRIDES.iter().enumerate() {
            let (in_dim, kernel, stride) = if i == 0 { (cfg.in_channels, 7, 4) } else { (cfg.dims[i - 1], 3, 2) };
            let embed = OverlapPatchEmbed::new(init, in_dim, cfg.dims[i], kernel, stride);
            stages.push(EncoderStage::new(
                init,
                Some(embed),
                cfg.dims[i],
                cfg.depths[i],
                reduction_rate(level_stride),
                cfg.mlp_ratio,
            )?);
        }
        let stages: [EncoderStage; 4] = stages.try_into().map_err(|_| NnError::Config("stage count".into()))?;
        Ok(Self { cfg, stages })
    }

    pub fn forward(&self, x: &Tensor3) -> Result<FeaturePyramid, NnError> {
        if x.channels() != self.cfg.in_channels {
            return Err(NnError::Shape(format!(
                "encoder expects {} input channels, got {}",
                self.cfg.in_channels,
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        crate::backbone::check_divisible(h, w, 32, "encoder input")?;
        let mut levels = Vec::with_capacity(4);
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = stage.run_blocks(stage.embed(&cur)?)?;
            levels.push(cur.clone());
        }
        let levels: [Tensor3; 4] = levels.try_into().map_err(|_| NnError::Config("stage count".into()))?;
        let pyramid = FeaturePyramid { levels };
        pyramid.validate(h, w, &self.cfg.dims)?;
        Ok(pyramid)
    }
}
