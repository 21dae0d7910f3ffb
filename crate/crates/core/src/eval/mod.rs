//! Evaluation protocols: the single-surface click loop and the multi-surface
//! selection-and-improvement loop over a joint mask.

mod aggregate;
mod harness;
mod interactive;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clicksim::next_click;
use crate::dataset::Sample;
use crate::mask::{iou, BinaryMask, Click, JointMask, MaskError};
use crate::predictor::{PredictRequest, Predictor, PredictorError};

pub use aggregate::{aggregate, noc_at, ImageResult};
pub use harness::{evaluate_dataset, evaluate_image, HarnessOptions, Protocol};
pub use interactive::{replay_click_log, ClickLogEntry, ClickOutcome, InteractiveState, SurfaceState};

pub const DEFAULT_MAX_CLICKS: usize = 20;
pub const DEFAULT_DISK_RADIUS: u32 = 5;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("image '{image}' surface {surface}: {source}")]
    Predictor { image: String, surface: u16, source: PredictorError },
    #[error("image '{image}' has no surfaces")]
    NoSurfaces { image: String },
    #[error("image '{image}' surface {surface} is empty in the ground truth")]
    EmptySurface { image: String, surface: u16 },
    #[error("image '{image}' surface {surface}: predictor returned a {got:?} map for a {expected:?} image")]
    PredictionSize { image: String, surface: u16, expected: (usize, usize), got: (usize, usize) },
    #[error("surface {surface} has used its budget of {n_max} clicks")]
    BudgetExhausted { surface: u16, n_max: usize },
    #[error("cannot construct predictor: {0}")]
    PredictorInit(PredictorError),
    #[error("every image failed; first error: {}", .0.first().map_or("<none>", |e| e.message.as_str()))]
    AllImagesFailed(Vec<crate::report::ImageError>),
    #[error("no results to aggregate")]
    EmptyResults,
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Per-surface success threshold, percent.
    pub theta_iou: f64,
    /// Average-IoU target of the multi-surface loop, percent.
    pub theta_avg: f64,
    pub n_max: usize,
    pub disk_radius: u32,
    pub mask_threshold: f64,
}

impl EvalConfig {
    pub fn new(theta_iou: f64, theta_avg: f64, n_max: usize) -> Result<Self, EvalError> {
        let cfg = Self { theta_iou, theta_avg, n_max, disk_radius: DEFAULT_DISK_RADIUS, mask_threshold: DEFAULT_MASK_THRESHOLD };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Single-surface protocol: the average target is irrelevant and set to `theta_iou`.
    pub fn single(theta_iou: f64, n_max: usize) -> Result<Self, EvalError> {
        Self::new(theta_iou, theta_iou, n_max)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let pct = |v: f64| v.is_finite() && v > 0.0 && v <= 100.0;
        if !pct(self.theta_iou) || !pct(self.theta_avg) {
            return Err(EvalError::Config(format!(
                "thresholds must lie in (0, 100], got theta_iou={} theta_avg={}",
                self.theta_iou, self.theta_avg
            )));
        }
        if self.theta_iou < self.theta_avg {
            return Err(EvalError::Config(format!(
                "theta_iou ({}) must be at least theta_avg ({})",
                self.theta_iou, self.theta_avg
            )));
        }
        if self.n_max == 0 {
            return Err(EvalError::Config("n_max must be at least 1".into()));
        }
        if !(self.mask_threshold.is_finite() && (0.0..1.0).contains(&self.mask_threshold)) {
            return Err(EvalError::Config(format!("mask_threshold {} outside [0, 1)", self.mask_threshold)));
        }
        Ok(())
    }
}

/// Outcome of clicking one surface until success or budget exhaustion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRunResult {
    pub surface: u16,
    /// Clicks issued; `n_max` on failure.
    pub clicks_used: usize,
    /// IoU after each click, percent.
    pub iou_trace: Vec<f64>,
    pub succeeded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiSurfaceRunResult {
    /// Phase 1, identical to running the single-surface loop per surface.
    pub phase1: Vec<SurfaceRunResult>,
    /// Accumulated clicks of surface `k` at index `k - 1`.
    pub per_surface_clicks: Vec<usize>,
    pub per_surface_failed: Vec<bool>,
    /// Surfaces selected for improvement, in order.
    pub revisit_order: Vec<u16>,
    pub revisit_count: usize,
    pub final_joint: JointMask,
    pub final_ious: Vec<f64>,
    pub final_avg_iou: f64,
}

impl MultiSurfaceRunResult {
    pub fn total_clicks(&self) -> usize {
        self.per_surface_clicks.iter().sum()
    }

    pub fn failures(&self) -> usize {
        self.per_surface_failed.iter().filter(|&&f| f).count()
    }
}

/// Feature- and click-phase time accumulated over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTiming {
    pub feature: Duration,
    pub click: Duration,
    pub clicks: usize,
}

impl PhaseTiming {
    pub fn merge(&mut self, other: &PhaseTiming) {
        self.feature += other.feature;
        self.click += other.click;
        self.clicks += other.clicks;
    }
}

/// Wraps a predictor, accumulating reported phase times.
pub struct Timed<'a> {
    pub inner: &'a mut dyn Predictor,
    pub timing: PhaseTiming,
}

impl<'a> Timed<'a> {
    pub fn new(inner: &'a mut dyn Predictor) -> Self {
        Self { inner, timing: PhaseTiming::default() }
    }
}

impl Predictor for Timed<'_> {
    fn describe(&self) -> String {
        self.inner.describe()
    }

    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError> {
        let t = self.inner.prepare(sample)?;
        self.timing.feature += t;
        Ok(t)
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<crate::predictor::PredictResponse, PredictorError> {
        let r = self.inner.predict(request)?;
        self.timing.click += r.click_time;
        self.timing.clicks += 1;
        Ok(r)
    }
}

/// One predictor call for `surface` with the accumulated `clicks`, binarised.
pub(crate) fn predict_mask(
    predictor: &mut dyn Predictor,
    image_id: &str,
    surface: u16,
    clicks: &[Click],
    prev_mask: &BinaryMask,
    cfg: &EvalConfig,
) -> Result<BinaryMask, EvalError> {
    let request =
        PredictRequest { image_id: image_id.to_string(), surface, clicks: clicks.to_vec(), prev_mask: prev_mask.clone() };
    let response = predictor
        .predict(&request)
        .map_err(|source| EvalError::Predictor { image: image_id.to_string(), surface, source })?;
    let got = response.probabilities.dims();
    if got != prev_mask.dims() {
        return Err(EvalError::PredictionSize { image: image_id.to_string(), surface, expected: prev_mask.dims(), got });
    }
    Ok(response.probabilities.binarize(cfg.mask_threshold))
}

/// Continue clicking `state` until its IoU reaches `theta_iou` or its click
/// budget is spent. Returns whether the threshold was reached.
fn improve(
    predictor: &mut dyn Predictor,
    image_id: &str,
    gt: &BinaryMask,
    state: &mut SurfaceState,
    cfg: &EvalConfig,
) -> Result<bool, EvalError> {
    while state.clicks.len() < cfg.n_max {
        let Some(click) = next_click(&state.mask, gt)? else {
            // prediction already equals ground truth
            return Ok(true);
        };
        state.clicks.push(click);
        let mask = predict_mask(predictor, image_id, state.surface, &state.clicks, &state.mask, cfg)?;
        let score = iou(&mask, gt)?;
        state.iou_trace.push(score);
        state.mask = mask;
        if score >= cfg.theta_iou {
            return Ok(true);
        }
    }
    Ok(false)
}

fn finish(state: &SurfaceState, succeeded: bool, cfg: &EvalConfig) -> SurfaceRunResult {
    SurfaceRunResult {
        surface: state.surface,
        clicks_used: if succeeded { state.clicks.len() } else { cfg.n_max },
        iou_trace: state.iou_trace.clone(),
        succeeded,
    }
}

/// Click one surface from an empty mask. The predictor must already be
/// prepared for `image_id`.
pub fn run_single_surface(
    predictor: &mut dyn Predictor,
    image_id: &str,
    surface: u16,
    gt: &BinaryMask,
    cfg: &EvalConfig,
) -> Result<SurfaceRunResult, EvalError> {
    cfg.validate()?;
    if gt.is_empty() {
        return Err(EvalError::EmptySurface { image: image_id.to_string(), surface });
    }
    let mut state = SurfaceState::new(surface, gt.height(), gt.width())?;
    let ok = improve(predictor, image_id, gt, &mut state, cfg)?;
    Ok(finish(&state, ok, cfg))
}

/// Mean over surfaces of the IoU between extractions, percent.
pub fn average_iou(joint: &JointMask, gt: &JointMask) -> Result<f64, EvalError> {
    Ok(per_surface_iou(joint, gt)?.iter().sum::<f64>() / f64::from(gt.surface_count().max(1)))
}

pub fn per_surface_iou(joint: &JointMask, gt: &JointMask) -> Result<Vec<f64>, EvalError> {
    if joint.surface_count() != gt.surface_count() {
        return Err(EvalError::Config(format!(
            "joint mask has {} surfaces, ground truth {}",
            joint.surface_count(),
            gt.surface_count()
        )));
    }
    gt.surface_ids().map(|k| Ok(iou(&joint.extract(k)?, &gt.extract(k)?)?)).collect()
}

/// Surface to improve next: the minimum-IoU surface among those that are not
/// failed and still below `theta_iou`, ties to the smallest id. Index `i` of
/// the slices describes surface `i + 1`.
pub fn select_worst(ious: &[f64], failed: &[bool], theta_iou: f64) -> Option<u16> {
    (0..ious.len())
        .filter(|&i| !failed[i] && ious[i] < theta_iou)
        .min_by(|&a, &b| ious[a].total_cmp(&ious[b]).then(a.cmp(&b)))
        .map(|i| i as u16 + 1)
}

/// Multi-surface protocol. Phase 1 runs the single-surface loop on surfaces
/// `1..=L` in order, pasting each result into the joint mask. Phase 2 then
/// repeatedly picks the worst non-failed surface below `theta_iou` (ties to
/// the smallest id) while the average IoU is below `theta_avg`, continues its
/// clicks from its current extraction and re-inserts the result.
pub fn run_multi_surface(
    predictor: &mut dyn Predictor,
    image_id: &str,
    gt: &JointMask,
    cfg: &EvalConfig,
) -> Result<MultiSurfaceRunResult, EvalError> {
    cfg.validate()?;
    let l = gt.surface_count();
    if l == 0 {
        return Err(EvalError::NoSurfaces { image: image_id.to_string() });
    }
    let gts: Vec<BinaryMask> = gt.surface_ids().map(|k| gt.extract(k)).collect::<Result<_, _>>()?;
    if let Some(k) = gts.iter().position(BinaryMask::is_empty) {
        return Err(EvalError::EmptySurface { image: image_id.to_string(), surface: k as u16 + 1 });
    }
    let (h, w) = gt.dims();
    let mut joint = JointMask::new(h, w, l)?;
    let mut states = Vec::with_capacity(usize::from(l));
    let mut failed = vec![false; usize::from(l)];
    let mut phase1 = Vec::with_capacity(usize::from(l));
    for k in 1..=l {
        let i = usize::from(k - 1);
        let mut state = SurfaceState::new(k, h, w)?;
        let ok = improve(predictor, image_id, &gts[i], &mut state, cfg)?;
        phase1.push(finish(&state, ok, cfg));
        failed[i] = !ok;
        joint = joint.insert_classical(k, &state.mask)?;
        states.push(state);
    }

    let mut revisit_order = Vec::new();
    loop {
        let ious = per_surface_iou(&joint, gt)?;
        let avg = ious.iter().sum::<f64>() / f64::from(l);
        if avg >= cfg.theta_avg {
            break;
        }
        let Some(k) = select_worst(&ious, &failed, cfg.theta_iou) else {
            break;
        };
        let i = usize::from(k - 1);
        revisit_order.push(k);
        states[i].mask = joint.extract(k)?;
        if !improve(predictor, image_id, &gts[i], &mut states[i], cfg)? {
            failed[i] = true;
        }
        joint = joint.insert_revisit(k, &states[i].mask)?;
    }

    let final_ious = per_surface_iou(&joint, gt)?;
    let final_avg_iou = final_ious.iter().sum::<f64>() / f64::from(l);
    Ok(MultiSurfaceRunResult {
        phase1,
        per_surface_clicks: states.iter().map(|s| s.clicks.len()).collect(),
        per_surface_failed: failed,
        revisit_count: revisit_order.len(),
        revisit_order,
        final_joint: joint,
        final_ious,
        final_avg_iou,
    })
}
