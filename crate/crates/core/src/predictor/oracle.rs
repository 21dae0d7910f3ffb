use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{PredictRequest, PredictResponse, Predictor, PredictorError, ProbabilityMap};
use crate::dataset::Sample;
use crate::mask::{BinaryMask, JointMask, RleMask};

/// Masks to return on successive calls, per image and surface. The call index
/// is the number of clicks in the request minus one; the last entry repeats.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleScript {
    images: BTreeMap<String, BTreeMap<u16, Vec<BinaryMask>>>,
}

#[derive(Serialize, Deserialize)]
struct ScriptFile {
    images: BTreeMap<String, BTreeMap<u16, Vec<RleMask>>>,
}

impl OracleScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set the script of one surface; an empty list is rejected.
    pub fn insert(&mut self, image_id: &str, surface: u16, masks: Vec<BinaryMask>) -> Result<(), PredictorError> {
        if masks.is_empty() {
            return Err(PredictorError::Script(format!("image '{image_id}' surface {surface}: empty script")));
        }
        self.images.entry(image_id.to_string()).or_default().insert(surface, masks);
        Ok(())
    }

    pub fn with(mut self, image_id: &str, surface: u16, masks: Vec<BinaryMask>) -> Result<Self, PredictorError> {
        self.insert(image_id, surface, masks)?;
        Ok(self)
    }

    pub fn mask_for(&self, image_id: &str, surface: u16, call: usize) -> Result<&BinaryMask, PredictorError> {
        let masks = self
            .images
            .get(image_id)
            .and_then(|s| s.get(&surface))
            .ok_or_else(|| PredictorError::Script(format!("no script for image '{image_id}' surface {surface}")))?;
        Ok(&masks[call.min(masks.len() - 1)])
    }

    /// JSON form: `{"images": {"<id>": {"<surface>": [RLE, ...]}}}`.
    pub fn to_json(&self) -> String {
        let images = self
            .images
            .iter()
            .map(|(id, s)| (id.clone(), s.iter().map(|(&k, m)| (k, m.iter().map(RleMask::encode).collect())).collect()))
            .collect();
        serde_json::to_string_pretty(&ScriptFile { images }).expect("script serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let file: ScriptFile = serde_json::from_str(text).map_err(|e| PredictorError::Script(e.to_string()))?;
        let mut script = Self::new();
        for (id, surfaces) in file.images {
            for (k, rles) in surfaces {
                let masks = rles.iter().map(RleMask::decode).collect::<Result<Vec<_>, _>>()?;
                script.insert(&id, k, masks)?;
            }
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PredictorError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Replays an [`OracleScript`].
#[derive(Clone, Debug)]
pub struct ScriptedOracle {
    script: OracleScript,
    name: String,
}

impl ScriptedOracle {
    pub fn new(script: OracleScript) -> Self {
        Self { script, name: "oracle:script".into() }
    }

    /// Override the description used in fingerprints (e.g. the script path).
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Predictor for ScriptedOracle {
    fn describe(&self) -> String {
        self.name.clone()
    }

    fn prepare(&mut self, _sample: &Sample) -> Result<Duration, PredictorError> {
        Ok(Duration::ZERO)
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError> {
        let start = Instant::now();
        request.validate()?;
        let call = request.clicks.len().saturating_sub(1);
        let mask = self.script.mask_for(&request.image_id, request.surface, call)?;
        mask.ensure_same_dims(&request.prev_mask)?;
        Ok(PredictResponse { probabilities: ProbabilityMap::from_mask(mask), click_time: start.elapsed() })
    }
}

/// Always answers with the ground truth of the requested surface.
#[derive(Clone, Debug, Default)]
pub struct GroundTruthOracle {
    gt: Option<(String, JointMask)>,
}

impl GroundTruthOracle {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Predictor for GroundTruthOracle {
    fn describe(&self) -> String {
        "oracle:gt".into()
    }

    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError> {
        self.gt = Some((sample.id.clone(), sample.gt.clone()));
        Ok(Duration::ZERO)
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError> {
        let start = Instant::now();
        let (id, gt) = self
            .gt
            .as_ref()
            .filter(|(id, _)| *id == request.image_id)
            .ok_or_else(|| PredictorError::NotPrepared(request.image_id.clone()))?;
        request.check_sample_dims(gt.dims())?;
        let mask = gt.extract(request.surface).map_err(|e| PredictorError::InvalidRequest(format!("{id}: {e}")))?;
        Ok(PredictResponse { probabilities: ProbabilityMap::from_mask(&mask), click_time: start.elapsed() })
    }
}
