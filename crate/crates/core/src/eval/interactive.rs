//! Click-by-click state shared by the annotation service and log replay.

use serde::{Deserialize, Serialize};

use super::{predict_mask, EvalConfig, EvalError};
use crate::mask::{BinaryMask, Click, JointMask, MaskError};
use crate::predictor::Predictor;

/// Clicks, current mask and IoU history of one surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceState {
    pub surface: u16,
    pub clicks: Vec<Click>,
    pub mask: BinaryMask,
    pub iou_trace: Vec<f64>,
}

impl SurfaceState {
    pub fn new(surface: u16, height: usize, width: usize) -> Result<Self, MaskError> {
        Ok(Self { surface, clicks: Vec::new(), mask: BinaryMask::new(height, width)?, iou_trace: Vec::new() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickLogEntry {
    pub surface: u16,
    pub click: Click,
}

/// Result of one interactive click.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickOutcome {
    /// Extraction of the clicked surface after re-insertion.
    pub mask: BinaryMask,
    /// Joint-mask pixels whose label changed.
    pub changed: BinaryMask,
    pub clicks_used: usize,
}

/// Per-surface clicks and the joint mask of one image under interactive use.
/// Every click re-inserts its surface with the revisit rule.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractiveState {
    image_id: String,
    surfaces: Vec<SurfaceState>,
    joint: JointMask,
    log: Vec<ClickLogEntry>,
}

impl InteractiveState {
    pub fn new(image_id: &str, height: usize, width: usize, surface_count: u16) -> Result<Self, MaskError> {
        let surfaces = (1..=surface_count).map(|k| SurfaceState::new(k, height, width)).collect::<Result<_, _>>()?;
        Ok(Self { image_id: image_id.to_string(), surfaces, joint: JointMask::new(height, width, surface_count)?, log: Vec::new() })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn joint(&self) -> &JointMask {
        &self.joint
    }

    pub fn log(&self) -> &[ClickLogEntry] {
        &self.log
    }

    pub fn surfaces(&self) -> &[SurfaceState] {
        &self.surfaces
    }

    pub fn surface(&self, k: u16) -> Result<&SurfaceState, MaskError> {
        self.surfaces
            .get(usize::from(k).wrapping_sub(1))
            .ok_or(MaskError::InvalidSurface { id: k, surface_count: self.joint.surface_count() })
    }

    /// Predict surface `entry.surface` with its accumulated clicks plus the
    /// new one, using its current extraction as previous mask. On error the
    /// state is left unchanged.
    pub fn apply_click(
        &mut self,
        predictor: &mut dyn Predictor,
        entry: ClickLogEntry,
        cfg: &EvalConfig,
    ) -> Result<ClickOutcome, EvalError> {
        let k = entry.surface;
        let used = self.surface(k)?.clicks.len();
        if used >= cfg.n_max {
            return Err(EvalError::BudgetExhausted { surface: k, n_max: cfg.n_max });
        }
        entry.click.check_bounds(self.joint.height(), self.joint.width())?;
        let prev = self.joint.extract(k)?;
        let mut clicks = self.surfaces[usize::from(k - 1)].clicks.clone();
        clicks.push(entry.click);
        let mask = predict_mask(predictor, &self.image_id, k, &clicks, &prev, cfg)?;
        let joint = self.joint.insert_revisit(k, &mask)?;
        let changed = self.joint.diff(&joint)?;
        let state = &mut self.surfaces[usize::from(k - 1)];
        state.clicks = clicks;
        state.mask = mask.clone();
        self.joint = joint;
        self.log.push(entry);
        Ok(ClickOutcome { mask, changed, clicks_used: used + 1 })
    }

    /// Record the IoU of surface `k` after its latest click.
    pub fn record_iou(&mut self, k: u16, value: f64) -> Result<(), MaskError> {
        self.surface(k)?;
        self.surfaces[usize::from(k - 1)].iou_trace.push(value);
        Ok(())
    }
}

/// Rebuild an interactive state by applying `log` in order to a fresh state.
pub fn replay_click_log(
    predictor: &mut dyn Predictor,
    image_id: &str,
    dims: (usize, usize),
    surface_count: u16,
    log: &[ClickLogEntry],
    cfg: &EvalConfig,
) -> Result<InteractiveState, EvalError> {
    let mut state = InteractiveState::new(image_id, dims.0, dims.1, surface_count)?;
    for &entry in log {
        state.apply_click(predictor, entry, cfg)?;
    }
    Ok(state)
}
