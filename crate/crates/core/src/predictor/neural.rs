use std::time::{Duration, Instant};

use mmms_nn::ops::interpolate_bilinear;
use mmms_nn::{MmmsNet, NetConfig, PreparedImage, Tensor3};

use super::{PredictRequest, PredictResponse, Predictor, PredictorError, ProbabilityMap};
use crate::dataset::Sample;
use crate::mask::{assemble_interaction, BinaryMask, Click};

pub const NEURAL_DEFAULT_SEED: u64 = 0;

/// Forward-only network predictor. Inputs are resampled to the network's
/// working resolution and the probability map back to the sample's.
pub struct NeuralPredictor {
    net: MmmsNet,
    modality_names: Vec<String>,
    disk_radius: u32,
    prepared: Option<(PreparedImage, (usize, usize))>,
}

impl NeuralPredictor {
    /// `modality_names` selects sample modalities in the order the network
    /// expects them; their count must match the network configuration.
    pub fn new(net: MmmsNet, modality_names: Vec<String>, disk_radius: u32) -> Result<Self, PredictorError> {
        if modality_names.len() != net.config().modality_channels.len() {
            return Err(PredictorError::Spec(format!(
                "network expects {} modalities, {} named",
                net.config().modality_channels.len(),
                modality_names.len()
            )));
        }
        Ok(Self { net, modality_names, disk_radius, prepared: None })
    }

    /// Desk-scale default geometry: 224x224 working resolution, 16px patches,
    /// 384-wide backbone features, default pyramid widths.
    pub fn default_config(modality_channels: Vec<usize>) -> NetConfig {
        NetConfig { image_size: (224, 224), d_fm: 384, ..NetConfig::paper_scale(modality_channels) }
    }

    pub fn net(&self) -> &MmmsNet {
        &self.net
    }

    pub fn prepared(&self) -> Option<&PreparedImage> {
        self.prepared.as_ref().map(|(p, _)| p)
    }
}

fn resize(x: &Tensor3, size: (usize, usize)) -> Result<Tensor3, PredictorError> {
    Ok(interpolate_bilinear(x, size.0, size.1)?)
}

/// Pixel-centre mapping of an index between resolutions.
fn rescale(i: usize, from: usize, to: usize) -> usize {
    let x = ((i as f64 + 0.5) * to as f64 / from as f64).floor() as usize;
    x.min(to - 1)
}

fn resize_mask_nearest(mask: &BinaryMask, size: (usize, usize)) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(size.0, size.1, |r, c| mask.get(rescale(r, size.0, h), rescale(c, size.1, w)))
        .expect("working resolution is non-empty")
}

impl Predictor for NeuralPredictor {
    fn describe(&self) -> String {
        format!("neural:{}:r{}", self.net.describe(), self.disk_radius)
    }

    fn prepare(&mut self, sample: &Sample) -> Result<Duration, PredictorError> {
        let start = Instant::now();
        let size = self.net.config().image_size;
        let rgb = resize(&sample.rgb, size)?;
        let mut modalities = Vec::with_capacity(self.modality_names.len());
        for (name, &channels) in self.modality_names.iter().zip(&self.net.config().modality_channels) {
            let m = sample.modality(name).ok_or_else(|| PredictorError::MissingModality(name.clone()))?;
            if m.channels() != channels {
                return Err(PredictorError::Spec(format!(
                    "modality '{name}' has {} channels, network expects {channels}",
                    m.channels()
                )));
            }
            modalities.push(resize(m, size)?);
        }
        let prepared = self.net.prepare(&sample.id, &rgb, &modalities)?;
        self.prepared = Some((prepared, sample.dims()));
        Ok(start.elapsed())
    }

    fn predict(&mut self, request: &PredictRequest) -> Result<PredictResponse, PredictorError> {
        let start = Instant::now();
        let (prepared, dims) = self
            .prepared
            .as_ref()
            .filter(|(p, _)| p.image_id == request.image_id)
            .ok_or_else(|| PredictorError::NotPrepared(request.image_id.clone()))?;
        request.check_sample_dims(*dims)?;
        let size = self.net.config().image_size;
        let clicks: Vec<Click> = request
            .clicks
            .iter()
            .map(|c| Click { row: rescale(c.row, dims.0, size.0), col: rescale(c.col, dims.1, size.1), ..*c })
            .collect();
        let prev = resize_mask_nearest(&request.prev_mask, size);
        let interaction = assemble_interaction(&clicks, &prev, self.disk_radius)?;
        let input = Tensor3::new(size.0, size.1, 3, interaction.to_interleaved())?;
        let probs = self.net.predict(prepared, &input)?;
        let mut out = resize(&probs, *dims)?;
        out.map_inplace(|v| v.clamp(0.0, 1.0));
        let probabilities = ProbabilityMap::new(dims.0, dims.1, out.into_data())?;
        Ok(PredictResponse { probabilities, click_time: start.elapsed() })
    }
}
