//! The frozen RGB foundation model is treated as a black box that hands back
//! four token grids. Two interchangeable providers exist: a seeded toy vision
//! transformer computed in process, and a directory of feature archives
//! produced ahead of time in bulk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::attention::{EffAttention, Mlp};
use crate::init::ParamInit;
use crate::ops::{Conv2d, LayerNorm};
use crate::{NnError, Tensor3};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"MMFT";
pub const ARCHIVE_VERSION: u32 = 1;
pub const ARCHIVE_EXTENSION: &str = "mmft";

/// Intermediate token grids of the foundation model, each
/// `(H / patch, W / patch, embed_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneFeatures {
    pub taps: Vec<Tensor3>,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl BackboneFeatures {
    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.taps.len() != 4 {
            return Err(NnError::Shape(format!("expected 4 feature taps, got {}", self.taps.len())));
        }
        check_divisible(self.image_height, self.image_width, self.patch_size, "backbone patch size")?;
        let (gh, gw) = self.grid();
        for (i, tap) in self.taps.iter().enumerate() {
            tap.ensure_shape((gh, gw, self.embed_dim), &format!("backbone tap {}", i + 1))?;
        }
        Ok(())
    }
}

pub(crate) fn check_divisible(h: usize, w: usize, divisor: usize, what: &str) -> Result<(), NnError> {
    if divisor == 0 || !h.is_multiple_of(divisor) || !w.is_multiple_of(divisor) {
        return Err(NnError::Indivisible { what: what.to_string(), size: (h, w), divisor });
    }
    Ok(())
}

/// Source of backbone features for an image.
pub trait FeatureProvider: Send + Sync {
    fn features(&self, image_id: &str, rgb: &Tensor3) -> Result<BackboneFeatures, NnError>;

    /// Short identifier used in report fingerprints.
    fn describe(&self) -> String;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StubBackboneConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// 1-based block indices whose outputs are tapped.
    pub taps: [usize; 4],
}

impl StubBackboneConfig {
    /// ViT-B geometry at 448x448 (patch 16, width 768, 12 blocks).
    pub fn vit_base(image_size: usize) -> Self {
        Self {
            image_height: image_size,
            image_width: image_size,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 2,
            taps: [3, 6, 9, 12],
        }
    }
}

struct VitBlock {
    norm1: LayerNorm,
    attn: EffAttention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl VitBlock {
    fn new(init: &mut ParamInit, cfg: &StubBackboneConfig) -> Result<Self, NnError> {
        Ok(Self {
            norm1: LayerNorm::new(cfg.embed_dim),
            attn: EffAttention::new(init, cfg.embed_dim, cfg.heads, 1)?,
            norm2: LayerNorm::new(cfg.embed_dim),
            mlp: Mlp::new(init, cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio),
        })
    }

    fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let h = self.norm1.forward(x)?;
        let mut x = self.attn.forward(&h, &h)?.add(x)?;
        let h = self.norm2.forward(&x)?;
        x.add_assign(&self.mlp.forward(&h)?)?;
        Ok(x)
    }
}

/// Deterministic toy vision transformer standing in for a frozen foundation
/// model: patchify, learned positional table, pre-norm transformer blocks.
pub struct StubBackbone {
    cfg: StubBackboneConfig,
    seed: u64,
    patchify: Conv2d,
    position: Tensor3,
    blocks: Vec<VitBlock>,
}

impl StubBackbone {
    pub fn new(cfg: StubBackboneConfig, seed: u64) -> Result<Self, NnError> {
        check_divisible(cfg.image_height, cfg.image_width, cfg.patch_size, "backbone patch size")?;
        if cfg.taps.iter().any(|&t| t == 0 || t > cfg.depth) || cfg.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NnError::Config(format!(
                "taps {:?} must be increasing block indices within depth {}",
                cfg.taps, cfg.depth
            )));
        }
        let mut init = ParamInit::new(seed);
        let patchify = Conv2d::new(&mut init, 3, cfg.embed_dim, cfg.patch_size, cfg.patch_size, 0);
        let (gh, gw) = (cfg.image_height / cfg.patch_size, cfg.image_width / cfg.patch_size);
        let position = Tensor3::new(gh, gw, cfg.embed_dim, init.trunc_normal(gh * gw * cfg.embed_dim, 0.02))?;
        let blocks = (0..cfg.depth).map(|_| VitBlock::new(&mut init, &cfg)).collect::<Result<_, _>>()?;
        Ok(Self { cfg, seed, patchify, position, blocks })
    }

    pub fn config(&self) -> &StubBackboneConfig {
        &self.cfg
    }

    pub fn forward(&self, rgb: &Tensor3) -> Result<BackboneFeatures, NnError> {
        check_divisible(rgb.height(), rgb.width(), self.cfg.patch_size, "backbone patch size")?;
        rgb.ensure_shape((self.cfg.image_height, self.cfg.image_width, 3), "backbone input")?;
        let mut x = self.patchify.forward(rgb)?.add(&self.position)?;
        let mut taps = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            if self.cfg.taps.contains(&(i + 1)) {
                taps.push(x.clone());
            }
        }
        Ok(BackboneFeatures {
            taps,
            patch_size: self.cfg.patch_size,
            embed_dim: self.cfg.embed_dim,
            image_height: rgb.height(),
            image_width: rgb.width(),
        })
    }
}

impl FeatureProvider for StubBackbone {
    fn features(&self, _image_id: &str, rgb: &Tensor3) -> Result<BackboneFeatures, NnError> {
        self.forward(rgb)
    }

    fn describe(&self) -> String {
        format!(
            "stub:{}:{}x{}/p{}/d{}/L{}",
            self.seed,
            self.cfg.image_height,
            self.cfg.image_width,
            self.cfg.patch_size,
            self.cfg.embed_dim,
            self.cfg.depth
        )
    }
}

/// Serialise features: `MMFT`, version, H, W, P, d, tap count (all u32 LE),
/// then each tap as little-endian f32 in row-major `(row, col, channel)` order.
pub fn write_archive(writer: &mut impl Write, features: &BackboneFeatures) -> Result<(), NnError> {
    features.validate()?;
    writer.write_all(ARCHIVE_MAGIC)?;
    writer.write_u32::<LittleEndian>(ARCHIVE_VERSION)?;
    for v in [
        features.image_height,
        features.image_width,
        features.patch_size,
        features.embed_dim,
        features.taps.len(),
    ] {
        writer.write_u32::<LittleEndian>(u32::try_from(v).map_err(|_| NnError::Archive("header field overflows u32".into()))?)?;
    }
    for tap in &features.taps {
        for &v in tap.data() {
            writer.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_archive(reader: &mut impl Read) -> Result<BackboneFeatures, NnError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(NnError::Archive(format!("bad magic {magic:?}")));
    }
    let version = reader.read_u32::<LittleEndian>()?;
    if version != ARCHIVE_VERSION {
        return Err(NnError::Archive(format!("unsupported archive version {version}")));
    }
    let mut header = [0usize; 5];
    for slot in &mut header {
        *slot = reader.read_u32::<LittleEndian>()? as usize;
    }
    let [image_height, image_width, patch_size, embed_dim, tap_count] = header;
    check_divisible(image_height, image_width, patch_size, "archive patch size")?;
    if tap_count != 4 || embed_dim == 0 {
        return Err(NnError::Archive(format!("archive holds {tap_count} taps of width {embed_dim}")));
    }
    let (gh, gw) = (image_height / patch_size, image_width / patch_size);
    let mut taps = Vec::with_capacity(tap_count);
    for _ in 0..tap_count {
        let mut data = vec![0.0f32; gh * gw * embed_dim];
        reader.read_f32_into::<LittleEndian>(&mut data)?;
        taps.push(Tensor3::new(gh, gw, embed_dim, data)?);
    }
    let features = BackboneFeatures { taps, patch_size, embed_dim, image_height, image_width };
    features.validate()?;
    Ok(features)
}

pub fn archive_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.{ARCHIVE_EXTENSION}"))
}

pub fn save_archive(dir: &Path, image_id: &str, features: &BackboneFeatures) -> Result<PathBuf, NnError> {
    std::fs::create_dir_all(dir)?;
    let path = archive_path(dir, image_id);
    let mut w = BufWriter::new(File::create(&path)?);
    write_archive(&mut w, features)?;
    w.flush()?;
    Ok(path)
}

/// File-backed provider reading one archive per image id.
#[derive(Clone, Debug)]
pub struct FeatureArchive {
    dir: PathBuf,
}

impl FeatureArchive {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn load(&self, image_id: &str) -> Result<BackboneFeatures, NnError> {
        let path = archive_path(&self.dir, image_id);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => NnError::MissingFeatures(image_id.to_string()),
            _ => NnError::Io(e),
        })?;
        read_archive(&mut BufReader::new(file))
    }
}

impl FeatureProvider for FeatureArchive {
    fn features(&self, image_id: &str, rgb: &Tensor3) -> Result<BackboneFeatures, NnError> {
        let features = self.load(image_id)?;
        if (features.image_height, features.image_width) != (rgb.height(), rgb.width()) {
            return Err(NnError::Archive(format!(
                "archive for {image_id} was extracted at {}x{}, input is {}x{}",
                features.image_height,
                features.image_width,
                rgb.height(),
                rgb.width()
            )));
        }
        Ok(features)
    }

    fn describe(&self) -> String {
        format!("archive:{}", self.dir.display())
    }
}
