//! Dataset layout on disk, sample loading and the synthetic generator.
//!
//! A dataset root holds `manifest.json` plus one PNG per image under `rgb/`,
//! `gt/` and one directory per declared modality:
//!
//! ```json
//! {"images":["a","b"],"modalities":[{"name":"depth","channels":1,"normalization":65535.0}],"gt":"joint_png"}
//! ```
//!
//! Ground truth is a single label PNG per image (0 = background). Labels are
//! relabelled to contiguous ids on load and the original ids are kept in
//! [`Sample::label_mapping`].

mod png_io;
pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mmms_nn::Tensor3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mask::{JointMask, MaskError};

pub use png_io::{read_png, RawImage};
pub use synth::{generate_synthetic, write_synthetic, OverlapMode, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("image '{0}' is not listed in the manifest")]
    UnknownImage(String),
    #[error("image '{id}': missing {what} ({path})")]
    MissingFile { id: String, what: String, path: PathBuf },
    #[error("image '{id}': {what} is {got:?} but rgb is {expected:?}")]
    DimensionMismatch { id: String, what: String, expected: (usize, usize), got: (usize, usize) },
    #[error("image '{id}': {what} has {got} channels, expected {expected}")]
    ChannelMismatch { id: String, what: String, expected: String, got: usize },
    #[error("image '{id}': {count} surface labels exceed the 65535 limit")]
    TooManyLabels { id: String, count: usize },
    #[error("image '{id}': ground truth has no surfaces")]
    NoSurfaces { id: String },
    #[error("png {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("invalid synthetic configuration: {0}")]
    Synth(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub channels: usize,
    /// Divisor mapping raw samples to `[0, 1]`; defaults to the PNG's bit-depth maximum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtFormat {
    #[default]
    #[serde(rename = "joint_png")]
    JointPng,
}

/// Metrics are computed at native resolution; predictors rescale internally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionPolicy {
    #[default]
    Native,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<String>,
    #[serde(default)]
    pub modalities: Vec<ModalitySpec>,
    #[serde(default)]
    pub gt: GtFormat,
    #[serde(default)]
    pub resolution: ResolutionPolicy,
}

impl Manifest {
    fn validate(&self, path: &Path) -> Result<(), DatasetError> {
        let fail = |message: String| DatasetError::Manifest { path: path.to_path_buf(), message };
        if self.images.is_empty() {
            return Err(fail("no images listed".into()));
        }
        let mut ids = BTreeSet::new();
        for id in &self.images {
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(fail(format!("image id '{id}' is not a plain file stem")));
            }
            if !ids.insert(id) {
                return Err(fail(format!("duplicate image id '{id}'")));
            }
        }
        let mut names = BTreeSet::new();
        for m in &self.modalities {
            if m.name.is_empty() || m.name.contains(['/', '\\']) || m.name == "rgb" || m.name == "gt" {
                return Err(fail(format!("invalid modality name '{}'", m.name)));
            }
            if !names.insert(&m.name) {
                return Err(fail(format!("duplicate modality '{}'", m.name)));
            }
            if m.channels == 0 || m.channels > 4 {
                return Err(fail(format!("modality '{}' declares {} channels", m.name, m.channels)));
            }
            if m.normalization.is_some_and(|n| !(n.is_finite() && n > 0.0)) {
                return Err(fail(format!("modality '{}' has a non-positive normalization", m.name)));
            }
        }
        Ok(())
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    pub fn modality_channels(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.channels).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Modality {
    pub name: String,
    pub data: Tensor3,
}

/// One loaded image with its modalities and joint ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(H, W, 3)` in `[0, 1]`.
    pub rgb: Tensor3,
    /// In manifest order.
    pub modalities: Vec<Modality>,
    pub gt: JointMask,
    /// Original ground-truth id of contiguous surface `k` at index `k - 1`.
    pub label_mapping: Vec<u16>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rgb.height(), self.rgb.width())
    }

    pub fn surface_count(&self) -> u16 {
        self.gt.surface_count()
    }

    pub fn modality(&self, name: &str) -> Option<&Tensor3> {
        self.modalities.iter().find(|m| m.name == name).map(|m| &m.data)
    }
}

/// Map raw labels to contiguous ids in ascending order of the originals.
/// Returns the relabelled map and the original id of each new id.
pub fn relabel(raw: &[u16]) -> (Vec<u16>, Vec<u16>) {
    let present: BTreeSet<u16> = raw.iter().copied().filter(|&l| l != 0).collect();
    let mapping: Vec<u16> = present.into_iter().collect();
    let mut lut = vec![0u16; usize::from(u16::MAX) + 1];
    for (i, &orig) in mapping.iter().enumerate() {
        lut[usize::from(orig)] = (i + 1) as u16;
    }
    (raw.iter().map(|&l| lut[usize::from(l)]).collect(), mapping)
}

pub(crate) fn normalize(raw: u16, max: f64) -> f32 {
    (f64::from(raw) / max) as f32
}

/// An opened dataset root.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::Manifest { path: path.clone(), message: e.to_string() })?;
        manifest.validate(&path)?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn ids(&self) -> &[String] {
        &self.manifest.images
    }

    fn file(&self, dir: &str, id: &str) -> PathBuf {
        self.root.join(dir).join(format!("{id}.png"))
    }

    /// Location of the RGB raster of `id`; may not exist.
    pub fn rgb_path(&self, id: &str) -> PathBuf {
        self.file("rgb", id)
    }

    /// Location of modality `name` for `id`; may not exist.
    pub fn modality_path(&self, name: &str, id: &str) -> PathBuf {
        self.file(name, id)
    }

    fn read(&self, dir: &str, id: &str, what: &str) -> Result<RawImage, DatasetError> {
        let path = self.file(dir, id);
        if !path.is_file() {
            return Err(DatasetError::MissingFile { id: id.to_string(), what: what.to_string(), path });
        }
        read_png(&path)
    }

    pub fn load_sample(&self, id: &str) -> Result<Sample, DatasetError> {
        if !self.manifest.images.iter().any(|i| i == id) {
            return Err(DatasetError::UnknownImage(id.to_string()));
        }
        let rgb_raw = self.read("rgb", id, "rgb image")?;
        if !(rgb_raw.channels == 3 || rgb_raw.channels == 4) || rgb_raw.indexed {
            return Err(DatasetError::ChannelMismatch {
                id: id.into(),
                what: "rgb image".into(),
                expected: "3 (or 4 with alpha)".into(),
                got: rgb_raw.channels,
            });
        }
        let (h, w) = (rgb_raw.height, rgb_raw.width);
        let max = f64::from(rgb_raw.max_value());
        let rgb = Tensor3::from_fn(h, w, 3, |r, c, ch| normalize(rgb_raw.samples[(r * w + c) * rgb_raw.channels + ch], max));

        let mut modalities = Vec::with_capacity(self.manifest.modalities.len());
        for spec in &self.manifest.modalities {
            let what = format!("modality '{}'", spec.name);
            let raw = self.read(&spec.name, id, &what)?;
            if (raw.height, raw.width) != (h, w) {
                return Err(DatasetError::DimensionMismatch { id: id.into(), what, expected: (h, w), got: (raw.height, raw.width) });
            }
            if raw.channels != spec.channels || raw.indexed {
                return Err(DatasetError::ChannelMismatch {
                    id: id.into(),
                    what,
                    expected: spec.channels.to_string(),
                    got: raw.channels,
                });
            }
            let norm = spec.normalization.unwrap_or(f64::from(raw.max_value()));
            let data = Tensor3::new(h, w, spec.channels, raw.samples.iter().map(|&v| normalize(v, norm)).collect())
                .expect("raster length matches its header");
            modalities.push(Modality { name: spec.name.clone(), data });
        }

        let gt_raw = self.read("gt", id, "ground truth")?;
        if (gt_raw.height, gt_raw.width) != (h, w) {
            return Err(DatasetError::DimensionMismatch {
                id: id.into(),
                what: "ground truth".into(),
                expected: (h, w),
                got: (gt_raw.height, gt_raw.width),
            });
        }
        if gt_raw.channels != 1 {
            return Err(DatasetError::ChannelMismatch {
                id: id.into(),
                what: "ground truth".into(),
                expected: "1".into(),
                got: gt_raw.channels,
            });
        }
        let (labels, label_mapping) = relabel(&gt_raw.samples);
        if label_mapping.len() > usize::from(u16::MAX) {
            return Err(DatasetError::TooManyLabels { id: id.into(), count: label_mapping.len() });
        }
        if label_mapping.is_empty() {
            return Err(DatasetError::NoSurfaces { id: id.into() });
        }
        let gt = JointMask::from_labels(h, w, label_mapping.len() as u16, labels)?;
        Ok(Sample { id: id.to_string(), rgb, modalities, gt, label_mapping })
    }

    /// SHA-256 over the manifest and every referenced raster, in manifest order.
    pub fn fingerprint(&self) -> Result<String, DatasetError> {
        let mut hasher = Sha256::new();
        let mut feed = |path: PathBuf| -> Result<(), DatasetError> {
            let bytes = fs::read(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
            Ok(())
        };
        feed(self.root.join(MANIFEST_FILE))?;
        for id in &self.manifest.images {
            feed(self.file("rgb", id))?;
            for m in &self.manifest.modalities {
                feed(self.file(&m.name, id))?;
            }
            feed(self.file("gt", id))?;
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn quantize(v: f32, max: f64) -> f64 {
    (f64::from(v) * max).round().clamp(0.0, max)
}

/// Write samples and a manifest under `root`. RGB is stored as 8-bit,
/// modalities as 16-bit with normalization 65535, ground truth with the
/// original label ids.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<Dataset, DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let first = samples.first().ok_or_else(|| DatasetError::Synth("no samples to write".into()))?;
    let modalities: Vec<ModalitySpec> = first
        .modalities
        .iter()
        .map(|m| ModalitySpec { name: m.name.clone(), channels: m.data.channels(), normalization: Some(65535.0) })
        .collect();
    for dir in ["rgb", "gt"].into_iter().chain(modalities.iter().map(|m| m.name.as_str())) {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(io(&d))?;
    }
    for s in samples {
        let (h, w) = s.dims();
        let rgb: Vec<u8> = s.rgb.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
        png_io::write_rgb8(&root.join("rgb").join(format!("{}.png", s.id)), w, h, &rgb)?;
        for (m, spec) in s.modalities.iter().zip(&modalities) {
            if m.name != spec.name || m.data.channels() != 1 {
                return Err(DatasetError::Synth(format!("sample '{}' modality layout differs from the first sample", s.id)));
            }
            let raw: Vec<u16> = m.data.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            png_io::write_gray16(&root.join(&m.name).join(format!("{}.png", s.id)), w, h, &raw)?;
        }
        let labels: Vec<u16> =
            s.gt.labels().iter().map(|&l| if l == 0 { 0 } else { s.label_mapping[usize::from(l) - 1] }).collect();
        png_io::write_labels(&root.join("gt").join(format!("{}.png", s.id)), w, h, &labels)?;
    }
    let manifest = Manifest {
        images: samples.iter().map(|s| s.id.clone()).collect(),
        modalities,
        gt: GtFormat::JointPng,
        resolution: ResolutionPolicy::Native,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    Dataset::open(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabel_sparse_ids() {
        let (labels, mapping) = relabel(&[0, 3, 7, 3, 0, 7]);
        assert_eq!(labels, vec![0, 1, 2, 1, 0, 2]);
        assert_eq!(mapping, vec![3, 7]);
    }

    #[test]
    fn manifest_json_shape() {
        let m: Manifest = serde_json::from_str(
            r#"{"images":["a"],"modalities":[{"name":"depth","channels":1}],"gt":"joint_png"}"#,
        )
        .unwrap();
        assert_eq!(m.modalities[0].normalization, None);
        assert_eq!(m.resolution, ResolutionPolicy::Native);
        assert!(m.validate(Path::new("m")).is_ok());
        let dup = Manifest { images: vec!["a".into(), "a".into()], ..m.clone() };
        assert!(dup.validate(Path::new("m")).is_err());
        let bad = Manifest { images: vec!["../x".into()], ..m };
        assert!(bad.validate(Path::new("m")).is_err());
    }
}
