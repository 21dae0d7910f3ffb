//! Seeded multi-surface images of flat-shaded rectangles and ellipses with a
//! matching depth-like modality.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mmms_nn::Tensor3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize, write_dataset, Dataset, DatasetError, Modality, Sample};
use crate::mask::JointMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    /// Surfaces separated by background.
    Disjoint,
    /// Surfaces tile a region and share edges.
    Adjacent,
}

impl FromStr for OverlapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "disjoint" => Ok(Self::Disjoint),
            "adjacent" => Ok(Self::Adjacent),
            other => Err(format!("unknown overlap mode '{other}' (expected disjoint|adjacent)")),
        }
    }
}

impl fmt::Display for OverlapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Disjoint => "disjoint",
            Self::Adjacent => "adjacent",
        })
    }
}

pub const DEFAULT_NOISE: u8 = 12;
pub const DEFAULT_MIN_CONTRAST: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub surfaces: u16,
    pub overlap: OverlapMode,
    pub height: usize,
    pub width: usize,
    /// Amplitude of uniform per-pixel noise, in 8-bit colour steps.
    pub noise: u8,
    /// Minimum RGB distance between two surfaces' base colours.
    pub min_contrast: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, count: usize, surfaces: u16, overlap: OverlapMode) -> Self {
        Self {
            seed,
            count,
            surfaces,
            overlap,
            height: 96,
            width: 96,
            noise: DEFAULT_NOISE,
            min_contrast: DEFAULT_MIN_CONTRAST,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let fail = |m: &str| Err(DatasetError::Synth(m.into()));
        if self.count == 0 {
            return fail("count must be at least 1");
        }
        if self.surfaces == 0 {
            return fail("surfaces must be at least 1");
        }
        if !(self.min_contrast >= 0.0 && self.min_contrast <= 120.0) {
            return fail("min_contrast must lie in [0, 120]");
        }
        if self.height < 16 || self.width < 16 {
            return fail("images must be at least 16x16");
        }
        let grid = grid_side(self.surfaces);
        if self.height / grid < 8 || self.width / grid < 8 {
            return fail("too many surfaces for the image size");
        }
        Ok(())
    }
}

fn grid_side(surfaces: u16) -> usize {
    (f64::from(surfaces).sqrt().ceil() as usize).max(1)
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    top: usize,
    left: usize,
    bottom: usize,
    right: usize,
}

impl Rect {
    fn height(&self) -> usize {
        self.bottom - self.top
    }

    fn width(&self) -> usize {
        self.right - self.left
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect(Rect),
    Ellipse(Rect),
}

impl Shape {
    fn bounds(&self) -> Rect {
        match *self {
            Shape::Rect(r) | Shape::Ellipse(r) => r,
        }
    }

    fn contains(&self, row: usize, col: usize) -> bool {
        let b = self.bounds();
        if row < b.top || row >= b.bottom || col < b.left || col >= b.right {
            return false;
        }
        match self {
            Shape::Rect(_) => true,
            Shape::Ellipse(_) => {
                let (ry, rx) = (b.height() as f64 / 2.0, b.width() as f64 / 2.0);
                let dy = (row as f64 + 0.5 - b.top as f64 - ry) / ry;
                let dx = (col as f64 + 0.5 - b.left as f64 - rx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

fn disjoint_layout(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Shape> {
    let g = grid_side(cfg.surfaces);
    let (ch, cw) = (cfg.height / g, cfg.width / g);
    let mut cells: Vec<(usize, usize)> = (0..g).flat_map(|r| (0..g).map(move |c| (r, c))).collect();
    cells.shuffle(rng);
    cells.truncate(usize::from(cfg.surfaces));
    cells.sort_unstable();
    cells
        .into_iter()
        .map(|(gr, gc)| {
            // 2px margin inside each cell keeps neighbours at least 4px apart
            let (avail_h, avail_w) = (ch - 4, cw - 4);
            let h = rng.random_range((avail_h / 2).max(3)..=avail_h);
            let w = rng.random_range((avail_w / 2).max(3)..=avail_w);
            let top = gr * ch + 2 + rng.random_range(0..=avail_h - h);
            let left = gc * cw + 2 + rng.random_range(0..=avail_w - w);
            let rect = Rect { top, left, bottom: top + h, right: left + w };
            if rng.random_bool(0.5) {
                Shape::Rect(rect)
            } else {
                Shape::Ellipse(rect)
            }
        })
        .collect()
}

/// Guillotine partition of a random region; every piece shares an edge with another.
fn adjacent_layout(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Shape> {
    let (h, w) = (cfg.height, cfg.width);
    let top = rng.random_range(h / 10..=h / 5);
    let left = rng.random_range(w / 10..=w / 5);
    let bottom = h - rng.random_range(h / 10..=h / 5);
    let right = w - rng.random_range(w / 10..=w / 5);
    let mut pieces = vec![Rect { top, left, bottom, right }];
    while pieces.len() < usize::from(cfg.surfaces) {
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| (a.height() * a.width()).cmp(&(b.height() * b.width())).then(ib.cmp(ia)))
            .expect("at least one piece");
        let p = pieces.swap_remove(idx);
        let frac = rng.random_range(0.2..0.8);
        let (a, b) = if p.height() >= p.width() {
            let cut = p.top + ((p.height() as f64 * frac).round() as usize).clamp(1, p.height() - 1);
            (Rect { bottom: cut, ..p }, Rect { top: cut, ..p })
        } else {
            let cut = p.left + ((p.width() as f64 * frac).round() as usize).clamp(1, p.width() - 1);
            (Rect { right: cut, ..p }, Rect { left: cut, ..p })
        };
        pieces.push(a);
        pieces.push(b);
    }
    pieces.sort_by_key(|r| (r.top, r.left));
    pieces.into_iter().map(Shape::Rect).collect()
}

fn color_distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter().zip(&b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum::<f64>().sqrt()
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.random_range(30..=225), rng.random_range(30..=225), rng.random_range(30..=225)]
}

/// Independent colours, far from the background and `min_contrast` apart.
fn distinct_colors(rng: &mut ChaCha8Rng, n: usize, background: [u8; 3], min_contrast: f64) -> Vec<[u8; 3]> {
    let mut colors: Vec<[u8; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut candidate = random_color(rng);
        for _ in 0..200 {
            let far_from_bg = color_distance(candidate, background) >= 90.0;
            let far_from_others = colors.iter().all(|&c| color_distance(candidate, c) >= min_contrast);
            if far_from_bg && far_from_others {
                break;
            }
            candidate = random_color(rng);
        }
        colors.push(candidate);
    }
    colors
}

/// Variations of one base colour: pieces of a single object that differ
/// by roughly `min_contrast`, so seams between them are weak.
fn related_colors(rng: &mut ChaCha8Rng, n: usize, background: [u8; 3], min_contrast: f64) -> Vec<[u8; 3]> {
    let mut base = random_color(rng);
    for _ in 0..200 {
        if color_distance(base, background) >= 90.0 + 2.0 * min_contrast {
            break;
        }
        base = random_color(rng);
    }
    let mut colors: Vec<[u8; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut candidate = base;
        for _ in 0..200 {
            let spread = (min_contrast * 1.5).max(1.0) as i32;
            candidate = base.map(|v| (i32::from(v) + rng.random_range(-spread..=spread)).clamp(0, 255) as u8);
            if colors.iter().all(|&c| color_distance(candidate, c) >= min_contrast) {
                break;
            }
        }
        colors.push(candidate);
    }
    colors
}

fn generate_one(cfg: &SynthConfig, index: usize) -> Result<Sample, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let shapes = match cfg.overlap {
        OverlapMode::Disjoint => disjoint_layout(&mut rng, cfg),
        OverlapMode::Adjacent => adjacent_layout(&mut rng, cfg),
    };
    let background = random_color(&mut rng);
    let background_depth: u16 = rng.random_range(52_000..=65_535);
    let colors = match cfg.overlap {
        OverlapMode::Disjoint => distinct_colors(&mut rng, shapes.len(), background, cfg.min_contrast),
        OverlapMode::Adjacent => related_colors(&mut rng, shapes.len(), background, cfg.min_contrast),
    };
    let depths: Vec<u16> = match cfg.overlap {
        OverlapMode::Disjoint => shapes.iter().map(|_| rng.random_range(6_000..=45_000)).collect(),
        OverlapMode::Adjacent => {
            // one slanted object: neighbouring pieces differ only slightly in depth
            let base: i32 = rng.random_range(10_000..=30_000);
            shapes.iter().map(|_| (base + rng.random_range(-4_000..=4_000)) as u16).collect()
        }
    };
    let shading: Vec<i32> = shapes.iter().map(|_| rng.random_range(-20..=20)).collect();

    let (h, w) = (cfg.height, cfg.width);
    let mut labels = vec![0u16; h * w];
    let mut rgb = vec![0u8; h * w * 3];
    let mut depth = vec![background_depth; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            rgb[i * 3..i * 3 + 3].copy_from_slice(&background);
            // later shapes paint over earlier ones
            for (k, shape) in shapes.iter().enumerate() {
                if shape.contains(r, c) {
                    labels[i] = (k + 1) as u16;
                    let b = shape.bounds();
                    let t = (r - b.top) as f64 / b.height().max(1) as f64;
                    let offset = (f64::from(shading[k]) * t).round() as i32;
                    for ch in 0..3 {
                        rgb[i * 3 + ch] = (i32::from(colors[k][ch]) + offset).clamp(0, 255) as u8;
                    }
                    depth[i] = depths[k];
                }
            }
        }
    }
    if cfg.noise > 0 {
        let amp = i32::from(cfg.noise);
        for v in &mut rgb {
            *v = (i32::from(*v) + rng.random_range(-amp..=amp)).clamp(0, 255) as u8;
        }
        // same relative amplitude on the 16-bit depth scale
        let depth_amp = amp * 257;
        for v in &mut depth {
            *v = (i32::from(*v) + rng.random_range(-depth_amp..=depth_amp)).clamp(0, 65_535) as u16;
        }
    }
    let surface_count = shapes.len() as u16;
    if let Some(k) = (1..=surface_count).find(|k| !labels.contains(k)) {
        return Err(DatasetError::Synth(format!("image {index}: surface {k} vanished")));
    }
    let gt = JointMask::from_labels(h, w, surface_count, labels)?;
    let rgb = Tensor3::new(h, w, 3, rgb.iter().map(|&v| normalize(u16::from(v), 255.0)).collect())
        .expect("rgb length matches");
    let depth = Tensor3::new(h, w, 1, depth.iter().map(|&v| normalize(v, 65535.0)).collect()).expect("depth length matches");
    Ok(Sample {
        id: format!("synth_{index:04}"),
        rgb,
        modalities: vec![Modality { name: "depth".into(), data: depth }],
        gt,
        label_mapping: (1..=surface_count).collect(),
    })
}

/// Deterministic in-memory dataset; image `i` depends only on `(seed, i)`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Sample>, DatasetError> {
    cfg.validate()?;
    (0..cfg.count).map(|i| generate_one(cfg, i)).collect()
}

/// Generate and write a dataset to `root`.
pub fn write_synthetic(cfg: &SynthConfig, root: &Path) -> Result<Dataset, DatasetError> {
    let samples = generate_synthetic(cfg)?;
    write_dataset(root, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touching_pairs(gt: &JointMask) -> usize {
        let (h, w) = gt.dims();
        let mut pairs = std::collections::BTreeSet::new();
        for r in 0..h {
            for c in 0..w {
                let a = gt.label(r, c);
                for (rr, cc) in [(r + 1, c), (r, c + 1)] {
                    if rr < h && cc < w {
                        let b = gt.label(rr, cc);
                        if a != 0 && b != 0 && a != b {
                            pairs.insert((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        pairs.len()
    }

    #[test]
    fn disjoint_surfaces_never_touch() {
        for seed in 0..5 {
            for s in generate_synthetic(&SynthConfig::new(seed, 4, 4, OverlapMode::Disjoint)).unwrap() {
                assert_eq!(s.surface_count(), 4);
                assert_eq!(touching_pairs(&s.gt), 0);
            }
        }
    }

    #[test]
    fn adjacent_surfaces_touch() {
        for seed in 0..5 {
            for s in generate_synthetic(&SynthConfig::new(seed, 4, 3, OverlapMode::Adjacent)).unwrap() {
                assert!(touching_pairs(&s.gt) >= 1);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::new(11, 3, 3, OverlapMode::Adjacent);
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SynthConfig { seed: 12, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_synthetic(&SynthConfig::new(0, 0, 2, OverlapMode::Disjoint)).is_err());
        assert!(generate_synthetic(&SynthConfig::new(0, 1, 0, OverlapMode::Disjoint)).is_err());
        assert!(generate_synthetic(&SynthConfig::new(0, 1, 200, OverlapMode::Disjoint)).is_err());
    }
}
