//! Pluggable mask predictors.
//!
//! A predictor is prepared once per image ([`Predictor::prepare`], the
//! feature phase) and then queried once per click ([`Predictor::predict`],
//! the click phase) with every click accumulated so far for the surface plus
//! the previous mask.

mod classical;
mod neural;
mod oracle;
pub mod remote;
mod spec;

use std::time::Duration;

use mmms_nn::NnError;

use crate::dataset::Sample;
use crate::mask::{BinaryMask, Click, MaskError};

pub use classical::{ClassicalConfig, ClassicalPredictor};
pub use neural::{NeuralPredictor, NEURAL_DEFAULT_SEED};
pub use oracle::{GroundTruthOracle, OracleScript, ScriptedOracle};
pub use remote::{RemoteConfig, RemotePredictor};
pub use spec::{BuildContext, PredictorSpec};

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("predictor has not been prepared for image '{0}'")]
    NotPrepared(String),
    #[error("sample lacks modality '{0}' required by the predictor")]
    MissingModality(String),
    #[error("request needs at least one positive click")]
    NoPositiveClick,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("oracle script: {0}")]
    Script(String),
    #[error("protocol violation in field '{field}': {message} (payload: {raw})")]
    Protocol { field: String, message: String, raw: String },
    #[error("predictor child did not answer within {after:?} (request: {raw})")]
    Timeout { after: Duration, raw: String },
    #[error("predictor child exited ({status}) (last payload: {raw})")]
    ChildExited { status: String, raw: String },
    #[error("predictor child reported: {0}")]
    Remote(String),
    #[error("cannot start predictor child '{command}': {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("invalid predictor spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// One click-phase query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictRequest {
    pub image_id: String,
    pub surface: u16,
    /// Every click placed on this surface so far, oldest first.
    pub clicks: Vec<Click>,
    /// Also fixes the target resolution.
    pub prev_mask: BinaryMask,
}

impl PredictRequest {
    pub fn dims(&self) -> (usize, usize) {
        self.prev_mask.dims()
    }

    /// Clicks must be inside the previous mask's extent.
    pub fn validate(&self) -> Result<(), PredictorError> {
        let (h, w) = self.dims();
        for click in &self.clicks {
            click.check_bounds(h, w)?;
        }
        Ok(())
    }

    pub(crate) fn check_sample_dims(&self, expected: (usize, usize)) -> Result<(), PredictorError> {
        if self.dims() != expected {
            return Err(PredictorError::InvalidRequest(format!(
                "previous mask is {:?} but image '{}' is {:?}",
                self.dims(),
                self.image_id,
                expected
            )));
        }
        self.validate()
    }
}

/// `H x W` foreground probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self, PredictorError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(PredictorError::InvalidRequest(format!(
                "probability map {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PredictorError::InvalidRequest(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        let values = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self { height: mask.height(), width: mask.width(), values }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Foreground where the probability strictly exceeds `threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        let bits = self.values.iter().map(|&p| f64::from(p) > threshold).collect();
        BinaryMask::from_bits(self.height, self.width, bits).expect("dimensions validated at construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictResponse {
    pub probabilities: ProbabilityMap,
    /// Click-phase duration as measured by the predictor.
    pub click_time: Duration,
}

pub trait Predictor: Send {
    /// Stable identity used for report fingerprints.
    fn describe(&self) -> String;

    /// Feature phase: build per-image state. Returns its duration.
    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError>;

    /// Click phase. Must not mutate prepared state.
    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn describe(&self) -> String {
        (**self).describe()
    }

    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError> {
        (**self).prepare(sample)
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError> {
        (**self).predict(request)
    }
}
