use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::{PredictRequest, PredictResponse, Predictor, PredictorError, ProbabilityMap};
use crate::dataset::Sample;
use crate::mask::Click;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicalConfig {
    /// Added to every 4-neighbour edge cost.
    pub epsilon: f64,
    /// Without negative clicks, pixels farther than `tau_bg * max distance` stay background.
    pub tau_bg: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, tau_bg: 0.25 }
    }
}

/// Relative slack on the background bound so sums of equal edge costs that
/// are mathematically inside the bound are not lost to rounding.
const BOUND_SLACK: f64 = 1e-9;

struct Prepared {
    image_id: String,
    height: usize,
    width: usize,
    /// Cost of the edge from `(r, c)` to `(r, c + 1)`.
    right: Vec<f64>,
    /// Cost of the edge from `(r, c)` to `(r + 1, c)`.
    down: Vec<f64>,
}

/// Geodesic seeded labelling over RGB plus every modality channel.
pub struct ClassicalPredictor {
    cfg: ClassicalConfig,
    prepared: Option<Prepared>,
}

impl ClassicalPredictor {
    pub fn new(cfg: ClassicalConfig) -> Self {
        Self { cfg, prepared: None }
    }
}

impl Default for ClassicalPredictor {
    fn default() -> Self {
        Self::new(ClassicalConfig::default())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Prepared {
    /// Multi-source Dijkstra from `seeds` over the 4-neighbour grid.
    fn geodesic(&self, seeds: impl Iterator<Item = usize>) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut dist = vec![f64::INFINITY; h * w];
        let mut heap = BinaryHeap::new();
        for s in seeds {
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, index: s });
        }
        while let Some(Entry { dist: d, index: i }) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            let (r, c) = (i / w, i % w);
            let mut relax = |j: usize, cost: f64| {
                let nd = d + cost;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Entry { dist: nd, index: j });
                }
            };
            if c + 1 < w {
                relax(i + 1, self.right[r * (w - 1) + c]);
            }
            if c > 0 {
                relax(i - 1, self.right[r * (w - 1) + c - 1]);
            }
            if r + 1 < h {
                relax(i + w, self.down[i]);
            }
            if r > 0 {
                relax(i - w, self.down[i - w]);
            }
        }
        dist
    }
}

fn seeds<'a>(clicks: &'a [Click], positive: bool, width: usize) -> impl Iterator<Item = usize> + 'a {
    clicks.iter().filter(move |c| c.is_positive() == positive).map(move |c| c.row * width + c.col)
}

impl Predictor for ClassicalPredictor {
    fn describe(&self) -> String {
        format!("classical:eps={}:tau_bg={}", self.cfg.epsilon, self.cfg.tau_bg)
    }

    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError> {
        let start = Instant::now();
        let (h, w) = sample.dims();
        let channels: Vec<&mmms_nn::Tensor3> =
            std::iter::once(&sample.rgb).chain(sample.modalities.iter().map(|m| &m.data)).collect();
        let features = mmms_nn::Tensor3::concat_channels(&channels)?;
        let diff = |a: usize, b: usize| -> f64 {
            let (pa, pb) = (features.pixel(a / w, a % w), features.pixel(b / w, b % w));
            let sq: f64 = pa.iter().zip(pb).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum();
            sq.sqrt() + self.cfg.epsilon
        };
        let mut right = Vec::with_capacity(h * w.saturating_sub(1));
        for r in 0..h {
            for c in 0..w.saturating_sub(1) {
                right.push(diff(r * w + c, r * w + c + 1));
            }
        }
        let down = (0..h.saturating_sub(1) * w).map(|i| diff(i, i + w)).collect();
        self.prepared = Some(Prepared { image_id: sample.id.clone(), height: h, width: w, right, down });
        Ok(start.elapsed())
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError> {
        let start = Instant::now();
        let p = self
            .prepared
            .as_ref()
            .filter(|p| p.image_id == request.image_id)
            .ok_or_else(|| PredictorError::NotPrepared(request.image_id.clone()))?;
        request.check_sample_dims((p.height, p.width))?;
        if !request.clicks.iter().any(Click::is_positive) {
            return Err(PredictorError::NoPositiveClick);
        }
        let d_pos = p.geodesic(seeds(&request.clicks, true, p.width));
        let values: Vec<f32> = if request.clicks.iter().any(|c| !c.is_positive()) {
            let d_neg = p.geodesic(seeds(&request.clicks, false, p.width));
            d_pos.iter().zip(&d_neg).map(|(&a, &b)| if a <= b { 1.0 } else { 0.0 }).collect()
        } else {
            let max = d_pos.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
            let bound = self.cfg.tau_bg * max * (1.0 + BOUND_SLACK);
            d_pos.iter().map(|&d| if d <= bound { 1.0 } else { 0.0 }).collect()
        };
        let probabilities = ProbabilityMap::new(p.height, p.width, values)?;
        Ok(PredictResponse { probabilities, click_time: start.elapsed() })
    }
}
