//! Click segmentation network: four transformer stages that each see the sum
//! of the mixed image features and the interaction features at their stride,
//! followed by an all-MLP prediction head.
//!
//! Stage 1 input is `f_mix^4 + f_int^4`. Stage `s > 1` input is the previous
//! stage output, brought to the next stride by the stage's own stride-2
//! overlapping patch merge, plus `f_mix^s + f_int^s`.

use crate::attention::reduction_rate;
use crate::encoder::{EncoderStage, OverlapPatchEmbed};
use crate::fpn::{FeaturePyramid, STRIDES};
use crate::init::ParamInit;
use crate::ops::{interpolate_bilinear, sigmoid, Linear};
use crate::{NnError, Tensor3};

#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub project: [Linear; 4],
    pub fuse: Linear,
    pub predict: Linear,
}

impl PredictionHead {
    pub fn new(init: &mut ParamInit, dims: [usize; 4], head_dim: usize) -> Self {
        Self {
            project: dims.map(|d| Linear::new(init, d, head_dim)),
            fuse: Linear::new(init, 4 * head_dim, head_dim),
            predict: Linear::new(init, head_dim, 1),
        }
    }

    /// Logits at stride 4.
    pub fn logits(&self, stages: &[Tensor3; 4]) -> Result<Tensor3, NnError> {
        let (h4, w4) = (stages[0].height(), stages[0].width());
        let mut projected = Vec::with_capacity(4);
        // deepest level first
        for i in (0..4).rev() {
            let p = self.project[i].forward(&stages[i])?;
            projected.push(interpolate_bilinear(&p, h4, w4)?);
        }
        let refs: Vec<&Tensor3> = projected.iter().collect();
        let mut fused = self.fuse.forward(&Tensor3::concat_channels(&refs)?)?;
        fused.map_inplace(|v| v.max(0.0));
        self.predict.forward(&fused)
    }
}

#[derive(Clone, Debug)]
pub struct CsNet {
    pub dims: [usize; 4],
    pub stages: [EncoderStage; 4],
    pub head: PredictionHead,
}

impl CsNet {
    pub fn new(
        init: &mut ParamInit,
        dims: [usize; 4],
        depths: [usize; 4],
        mlp_ratio: usize,
        head_dim: usize,
    ) -> Result<Self, NnError> {
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let embed = (i > 0).then(|| OverlapPatchEmbed::new(init, dims[i - 1], dims[i], 3, 2));
            stages.push(EncoderStage::new(init, embed, dims[i], depths[i], reduction_rate(STRIDES[i]), mlp_ratio)?);
        }
        let stages: [EncoderStage; 4] = stages.try_into().map_err(|_| NnError::Config("stage count".into()))?;
        let head = PredictionHead::new(init, dims, head_dim);
        Ok(Self { dims, stages, head })
    }

    /// Per-stage outputs before the head.
    pub fn stage_outputs(&self, f_mix: &FeaturePyramid, f_int: &FeaturePyramid) -> Result<[Tensor3; 4], NnError> {
        let (h, w) = f_mix.image_size();
        f_mix.validate(h, w, &self.dims)?;
        f_int.validate(h, w, &self.dims)?;
        let mut outputs: Vec<Tensor3> = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            let mut x = f_mix.levels[i].add(&f_int.levels[i])?;
            if let Some(prev) = outputs.last() {
                x.add_assign(&stage.embed(prev)?)?;
            }
            outputs.push(stage.run_blocks(x)?);
        }
        outputs.try_into().map_err(|_| NnError::Config("stage count".into()))
    }

    /// Foreground probabilities at `out_h x out_w` (one channel).
    pub fn forward(
        &self,
        f_mix: &FeaturePyramid,
        f_int: &FeaturePyramid,
        out_h: usize,
        out_w: usize,
    ) -> Result<Tensor3, NnError> {
        let stages = self.stage_outputs(f_mix, f_int)?;
        let logits = self.head.logits(&stages)?;
        let mut probs = interpolate_bilinear(&logits, out_h, out_w)?;
        probs.map_inplace(sigmoid);
        Ok(probs)
    }
}
