//! Multi-modal fusion. Each non-RGB modality gets its own encoder and, per
//! pyramid level, a cross-attention block whose queries come from the image
//! side and whose keys/values come from the modality side:
//!
//! ```text
//! f_hat = EffCA(LN(f_img), LN(f_mod)) + f_img + f_mod
//! f_mix = MLP(LN(f_hat)) + f_hat
//! ```
//!
//! With several modalities the blocks chain: the output for modality `m`
//! becomes the image-side input for modality `m + 1`.

use crate::attention::{reduction_rate, EffAttention, Mlp};
use crate::encoder::{heads_for, EncoderConfig, SegFormerEncoder};
use crate::fpn::{FeaturePyramid, STRIDES};
use crate::init::ParamInit;
use crate::ops::LayerNorm;
use crate::{NnError, Tensor3};

#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub norm_img: LayerNorm,
    pub norm_mod: LayerNorm,
    pub attn: EffAttention,
    pub norm_mix: LayerNorm,
    pub mlp: Mlp,
}

impl CrossBlock {
    pub fn new(init: &mut ParamInit, dim: usize, reduction: usize, mlp_ratio: usize) -> Result<Self, NnError> {
        Ok(Self {
            norm_img: LayerNorm::new(dim),
            norm_mod: LayerNorm::new(dim),
            attn: EffAttention::new(init, dim, heads_for(dim), reduction)?,
            norm_mix: LayerNorm::new(dim),
            mlp: Mlp::new(init, dim, dim * mlp_ratio),
        })
    }

    pub fn forward(&self, f_img: &Tensor3, f_mod: &Tensor3) -> Result<Tensor3, NnError> {
        if f_img.shape() != f_mod.shape() {
            return Err(NnError::Shape(format!(
                "cross block inputs differ: {:?} vs {:?}",
                f_img.shape(),
                f_mod.shape()
            )));
        }
        let attended = self.attn.forward(&self.norm_img.forward(f_img)?, &self.norm_mod.forward(f_mod)?)?;
        let mut mixed = attended.add(f_img)?;
        mixed.add_assign(f_mod)?;
        let mut out = self.mlp.forward(&self.norm_mix.forward(&mixed)?)?;
        out.add_assign(&mixed)?;
        Ok(out)
    }

    /// Zero the output projections of both residual branches.
    pub fn zero_branches(&mut self) {
        self.attn.proj.zero();
        self.mlp.fc2.zero();
    }
}

#[derive(Clone, Debug)]
pub struct ModalityBranch {
    pub encoder: SegFormerEncoder,
    pub cross: [CrossBlock; 4],
}

impl ModalityBranch {
    pub fn encode(&self, x: &Tensor3) -> Result<FeaturePyramid, NnError> {
        self.encoder.forward(x)
    }

    pub fn fuse(&self, f_img: &FeaturePyramid, f_mod: &FeaturePyramid) -> Result<FeaturePyramid, NnError> {
        Ok(FeaturePyramid {
            levels: [
                self.cross[0].forward(&f_img.levels[0], &f_mod.levels[0])?,
                self.cross[1].forward(&f_img.levels[1], &f_mod.levels[1])?,
                self.cross[2].forward(&f_img.levels[2], &f_mod.levels[2])?,
                self.cross[3].forward(&f_img.levels[3], &f_mod.levels[3])?,
            ],
        })
    }
}

#[derive(Clone, Debug)]
pub struct MmFuser {
    pub dims: [usize; 4],
    pub branches: Vec<ModalityBranch>,
}

impl MmFuser {
    /// One branch per entry of `modality_channels`.
    pub fn new(
        init: &mut ParamInit,
        dims: [usize; 4],
        modality_channels: &[usize],
        depths: [usize; 4],
        mlp_ratio: usize,
    ) -> Result<Self, NnError> {
        let mut branches = Vec::with_capacity(modality_channels.len());
        for &channels in modality_channels {
            let encoder =
                SegFormerEncoder::new(init, EncoderConfig { in_channels: channels, dims, depths, mlp_ratio })?;
            let mut cross = Vec::with_capacity(4);
            for (i, &dim) in dims.iter().enumerate() {
                cross.push(CrossBlock::new(init, dim, reduction_rate(STRIDES[i]), mlp_ratio)?);
            }
            let cross: [CrossBlock; 4] = cross.try_into().map_err(|_| NnError::Config("level count".into()))?;
            branches.push(ModalityBranch { encoder, cross });
        }
        Ok(Self { dims, branches })
    }

    pub fn forward(&self, f_img: &FeaturePyramid, modalities: &[Tensor3]) -> Result<FeaturePyramid, NnError> {
        if modalities.len() != self.branches.len() {
            return Err(NnError::Config(format!(
                "fuser built for {} modalities, got {}",
                self.branches.len(),
                modalities.len()
            )));
        }
        let (h, w) = f_img.image_size();
        f_img.validate(h, w, &self.dims)?;
        let mut current = f_img.clone();
        for (branch, x) in self.branches.iter().zip(modalities) {
            if (x.height(), x.width()) != (h, w) {
                return Err(NnError::Shape(format!(
                    "modality is {}x{}, image pyramid implies {h}x{w}",
                    x.height(),
                    x.width()
                )));
            }
            let f_mod = branch.encode(x)?;
            current = branch.fuse(&current, &f_mod)?;
        }
        Ok(current)
    }
}
