//! One live annotation session: a prepared predictor plus the interactive
//! multi-surface state. All methods are synchronous; the HTTP layer runs
//! them on blocking threads.

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::dataset::Sample;
use crate::eval::{per_surface_iou, select_worst, ClickLogEntry, EvalConfig, EvalError, InteractiveState};
use crate::mask::{iou, Click, Polarity, RleMask};
use crate::predictor::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRequest {
    pub surface: u16,
    pub y: usize,
    pub x: usize,
    pub positive: bool,
}

impl ClickRequest {
    pub fn entry(self) -> ClickLogEntry {
        let polarity = if self.positive { Polarity::Positive } else { Polarity::Negative };
        ClickLogEntry { surface: self.surface, click: Click { row: self.y, col: self.x, polarity } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickResponse {
    pub surface: u16,
    /// The surface's extraction from the joint mask after the insert.
    pub mask: RleMask,
    /// Pixels whose joint label changed with this click.
    pub changed: RleMask,
    pub iou: f64,
    pub ious: Vec<f64>,
    pub avg_iou: f64,
    pub clicks_used: usize,
    pub total_clicks: usize,
    pub locked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickView {
    pub y: usize,
    pub x: usize,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSnapshot {
    pub surface: u16,
    pub clicks: Vec<ClickView>,
    pub clicks_used: usize,
    pub mask: RleMask,
    pub iou: f64,
    /// Budget spent; further clicks are rejected.
    pub locked: bool,
    /// Budget spent without reaching `theta_iou`.
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub predictor: String,
    pub current_surface: u16,
    pub theta_iou: f64,
    pub theta_avg: f64,
    pub n_max: usize,
    pub surfaces: Vec<SurfaceSnapshot>,
    pub avg_iou: f64,
    pub total_clicks: usize,
    pub log_len: usize,
}

pub struct Session {
    id: String,
    sample: Sample,
    predictor: Box<dyn Predictor>,
    predictor_name: String,
    state: InteractiveState,
    cfg: EvalConfig,
    current: u16,
}

impl Session {
    /// Prepares `predictor` for `sample` (the once-per-image phase).
    pub fn new(id: String, sample: Sample, mut predictor: Box<dyn Predictor>, cfg: EvalConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        predictor.prepare(&sample).map_err(|e| ServiceError::Predictor(e.to_string()))?;
        let (h, w) = sample.dims();
        let state = InteractiveState::new(&sample.id, h, w, sample.surface_count())?;
        let predictor_name = predictor.describe();
        Ok(Self { id, sample, predictor, predictor_name, state, cfg, current: 1 })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &InteractiveState {
        &self.state
    }

    pub fn log(&self) -> &[ClickLogEntry] {
        self.state.log()
    }

    pub fn surface_ids(&self) -> Vec<u16> {
        self.sample.gt.surface_ids().collect()
    }

    fn ious(&self) -> Result<Vec<f64>, ServiceError> {
        Ok(per_surface_iou(self.state.joint(), &self.sample.gt)?)
    }

    fn failed(&self, ious: &[f64]) -> Vec<bool> {
        self.state
            .surfaces()
            .iter()
            .zip(ious)
            .map(|(s, &v)| s.clicks.len() >= self.cfg.n_max && v < self.cfg.theta_iou)
            .collect()
    }

    pub fn click(&mut self, request: ClickRequest) -> Result<ClickResponse, ServiceError> {
        let k = request.surface;
        let outcome = self.state.apply_click(self.predictor.as_mut(), request.entry(), &self.cfg).map_err(|e| match e {
            EvalError::Predictor { source, .. } => ServiceError::Predictor(source.to_string()),
            other => other.into(),
        })?;
        let gt_k = self.sample.gt.extract(k)?;
        let value = iou(&outcome.mask, &gt_k)?;
        self.state.record_iou(k, value)?;
        self.current = k;
        let ious = self.ious()?;
        Ok(ClickResponse {
            surface: k,
            mask: RleMask::encode(&self.state.joint().extract(k)?),
            changed: RleMask::encode(&outcome.changed),
            iou: ious[usize::from(k - 1)],
            avg_iou: mean(&ious),
            ious,
            clicks_used: outcome.clicks_used,
            total_clicks: self.total_clicks(),
            locked: outcome.clicks_used >= self.cfg.n_max,
        })
    }

    /// Drop the last click and recompute the state from the remaining log.
    pub fn undo(&mut self) -> Result<SessionSnapshot, ServiceError> {
        let log = self.state.log();
        let Some((last, rest)) = log.split_last() else {
            return Err(ServiceError::NothingToUndo);
        };
        let (last, rest) = (*last, rest.to_vec());
        let (h, w) = self.sample.dims();
        let fresh = InteractiveState::new(&self.sample.id, h, w, self.sample.surface_count())?;
        let previous = std::mem::replace(&mut self.state, fresh);
        for entry in rest {
            if let Err(e) = self.click(ClickRequest {
                surface: entry.surface,
                y: entry.click.row,
                x: entry.click.col,
                positive: entry.click.is_positive(),
            }) {
                self.state = previous;
                return Err(e);
            }
        }
        self.current = last.surface;
        self.snapshot()
    }

    pub fn select_surface(&mut self, k: u16) -> Result<SessionSnapshot, ServiceError> {
        self.state.surface(k)?;
        self.current = k;
        self.snapshot()
    }

    /// The surface the automatic protocol would revisit next, if any.
    pub fn select_worst(&mut self) -> Result<Option<u16>, ServiceError> {
        let ious = self.ious()?;
        let pick = select_worst(&ious, &self.failed(&ious), self.cfg.theta_iou);
        if let Some(k) = pick {
            self.current = k;
        }
        Ok(pick)
    }

    fn total_clicks(&self) -> usize {
        self.state.surfaces().iter().map(|s| s.clicks.len()).sum()
    }

    pub fn snapshot(&self) -> Result<SessionSnapshot, ServiceError> {
        let ious = self.ious()?;
        let failed = self.failed(&ious);
        let joint = self.state.joint();
        let surfaces = self
            .state
            .surfaces()
            .iter()
            .zip(ious.iter().zip(&failed))
            .map(|(s, (&v, &f))| {
                Ok(SurfaceSnapshot {
                    surface: s.surface,
                    clicks: s.clicks.iter().map(|c| ClickView { y: c.row, x: c.col, positive: c.is_positive() }).collect(),
                    clicks_used: s.clicks.len(),
                    mask: RleMask::encode(&joint.extract(s.surface)?),
                    iou: v,
                    locked: s.clicks.len() >= self.cfg.n_max,
                    failed: f,
                })
            })
            .collect::<Result<Vec<_>, ServiceError>>()?;
        Ok(SessionSnapshot {
            session_id: self.id.clone(),
            image_id: self.sample.id.clone(),
            height: joint.height(),
            width: joint.width(),
            predictor: self.predictor_name.clone(),
            current_surface: self.current,
            theta_iou: self.cfg.theta_iou,
            theta_avg: self.cfg.theta_avg,
            n_max: self.cfg.n_max,
            surfaces,
            avg_iou: mean(&ious),
            total_clicks: self.total_clicks(),
            log_len: self.state.log().len(),
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
