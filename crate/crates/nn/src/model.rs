//! End-to-end network with the once-per-image / per-click split.
//!
//! [`MmmsNet::prepare`] runs the backbone provider, the pyramid adapter and the
//! fuser, and caches the mixed pyramid. [`MmmsNet::predict`] only runs the
//! interaction embedding and the click segmentation network.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::backbone::{check_divisible, FeatureProvider, StubBackbone, StubBackboneConfig};
use crate::csnet::CsNet;
use crate::encoder::heads_for;
use crate::fpn::{FeaturePyramid, FpnConfig, ParallelFpn, DEFAULT_EMBED_DIMS};
use crate::fuser::MmFuser;
use crate::init::ParamInit;
use crate::patch_embed::MsPatchEmbed;
use crate::{NnError, Tensor3};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Working resolution `(H, W)`; inputs are resized to it by the caller.
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub d_fm: usize,
    pub embed_dims: [usize; 4],
    pub modality_channels: Vec<usize>,
    pub fuser_depths: [usize; 4],
    pub csnet_depths: [usize; 4],
    pub mlp_ratio: usize,
    pub head_dim: usize,
}

impl NetConfig {
    /// 448x448 working resolution, ViT-B/16 features, default pyramid widths.
    pub fn paper_scale(modality_channels: Vec<usize>) -> Self {
        Self {
            image_size: (448, 448),
            patch_size: 16,
            d_fm: 768,
            embed_dims: DEFAULT_EMBED_DIMS,
            modality_channels,
            fuser_depths: [1, 1, 1, 1],
            csnet_depths: [1, 1, 1, 1],
            mlp_ratio: 4,
            head_dim: 256,
        }
    }

    /// Small geometry for tests and desk-scale runs.
    pub fn tiny(modality_channels: Vec<usize>) -> Self {
        Self {
            image_size: (64, 64),
            patch_size: 8,
            d_fm: 32,
            embed_dims: [8, 16, 24, 32],
            modality_channels,
            fuser_depths: [1, 1, 1, 1],
            csnet_depths: [1, 1, 1, 1],
            mlp_ratio: 4,
            head_dim: 16,
        }
    }

    pub fn fpn(&self) -> FpnConfig {
        FpnConfig { d_fm: self.d_fm, patch_size: self.patch_size, embed_dims: self.embed_dims }
    }

    /// Stub backbone geometry matching this network (12 blocks, taps 3/6/9/12).
    pub fn stub_backbone(&self) -> StubBackboneConfig {
        StubBackboneConfig {
            image_height: self.image_size.0,
            image_width: self.image_size.1,
            patch_size: self.patch_size,
            embed_dim: self.d_fm,
            depth: 12,
            heads: heads_for(self.d_fm),
            mlp_ratio: 2,
            taps: [3, 6, 9, 12],
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (h, w) = self.image_size;
        check_divisible(h, w, 32, "working resolution")?;
        check_divisible(h, w, self.patch_size, "working resolution")
    }
}

/// How often each sub-network has run.
#[derive(Debug, Default)]
pub struct CallCounters {
    backbone: AtomicUsize,
    parallel_fpn: AtomicUsize,
    mmfuser: AtomicUsize,
    patch_embed: AtomicUsize,
    csnet: AtomicUsize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub backbone: usize,
    pub parallel_fpn: usize,
    pub mmfuser: usize,
    pub patch_embed: usize,
    pub csnet: usize,
}

impl CallCounters {
    pub fn snapshot(&self) -> CallCounts {
        CallCounts {
            backbone: self.backbone.load(Ordering::Relaxed),
            parallel_fpn: self.parallel_fpn.load(Ordering::Relaxed),
            mmfuser: self.mmfuser.load(Ordering::Relaxed),
            patch_embed: self.patch_embed.load(Ordering::Relaxed),
            csnet: self.csnet.load(Ordering::Relaxed),
        }
    }

    fn bump(counter: &AtomicUsize) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

/// Per-image state produced once and reused by every click.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub image_id: String,
    pub f_mix: FeaturePyramid,
}

pub struct MmmsNet {
    cfg: NetConfig,
    seed: u64,
    provider: Box<dyn FeatureProvider>,
    pub fpn: ParallelFpn,
    pub fuser: MmFuser,
    pub patch_embed: MsPatchEmbed,
    pub csnet: CsNet,
    counters: Arc<CallCounters>,
}

impl MmmsNet {
    pub fn new(cfg: NetConfig, seed: u64, provider: Box<dyn FeatureProvider>) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut init = ParamInit::new(seed);
        let fpn = ParallelFpn::new(&mut init, cfg.fpn())?;
        let fuser = MmFuser::new(&mut init, cfg.embed_dims, &cfg.modality_channels, cfg.fuser_depths, cfg.mlp_ratio)?;
        let patch_embed = MsPatchEmbed::new(&mut init, cfg.embed_dims);
        let csnet = CsNet::new(&mut init, cfg.embed_dims, cfg.csnet_depths, cfg.mlp_ratio, cfg.head_dim)?;
        Ok(Self { cfg, seed, provider, fpn, fuser, patch_embed, csnet, counters: Arc::default() })
    }

    /// Network with an in-process stub backbone seeded from `seed`.
    pub fn with_stub_backbone(cfg: NetConfig, seed: u64) -> Result<Self, NnError> {
        let backbone = StubBackbone::new(cfg.stub_backbone(), seed)?;
        Self::new(cfg, seed, Box::new(backbone))
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn counters(&self) -> Arc<CallCounters> {
        Arc::clone(&self.counters)
    }

    pub fn describe(&self) -> String {
        format!(
            "mmms-net:{}:{}x{}:{}:mods{:?}",
            self.seed,
            self.cfg.image_size.0,
            self.cfg.image_size.1,
            self.provider.describe(),
            self.cfg.modality_channels
        )
    }

    /// Once-per-image work: backbone, pyramid adapter, fusion.
    pub fn prepare(&self, image_id: &str, rgb: &Tensor3, modalities: &[Tensor3]) -> Result<PreparedImage, NnError> {
        let (h, w) = self.cfg.image_size;
        rgb.ensure_shape((h, w, 3), "rgb input")?;
        for (m, (x, &channels)) in modalities.iter().zip(&self.cfg.modality_channels).enumerate() {
            x.ensure_shape((h, w, channels), &format!("modality {m}"))?;
        }
        CallCounters::bump(&self.counters.backbone);
        let features = self.provider.features(image_id, rgb)?;
        CallCounters::bump(&self.counters.parallel_fpn);
        let f_img = self.fpn.forward(&features)?;
        CallCounters::bump(&self.counters.mmfuser);
        let f_mix = self.fuser.forward(&f_img, modalities)?;
        Ok(PreparedImage { image_id: image_id.to_string(), f_mix })
    }

    /// Per-click work: interaction embedding and mask prediction at the
    /// working resolution.
    pub fn predict(&self, prepared: &PreparedImage, interaction: &Tensor3) -> Result<Tensor3, NnError> {
        let (h, w) = self.cfg.image_size;
        interaction.ensure_shape((h, w, 3), "interaction tensor")?;
        CallCounters::bump(&self.counters.patch_embed);
        let f_int = self.patch_embed.forward(interaction)?;
        CallCounters::bump(&self.counters.csnet);
        self.csnet.forward(&prepared.f_mix, &f_int, h, w)
    }
}
