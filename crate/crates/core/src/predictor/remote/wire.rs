//! Newline-delimited JSON messages exchanged with a predictor child.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use mmms_nn::Tensor3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mask::{BinaryMask, Click, Polarity, RleMask};

use crate::predictor::{PredictRequest, PredictorError};

/// Longest payload excerpt carried inside an error.
const RAW_EXCERPT: usize = 512;

pub(crate) fn excerpt(raw: &str) -> String {
    if raw.len() <= RAW_EXCERPT {
        return raw.to_string();
    }
    let mut end = RAW_EXCERPT;
    while !raw.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &raw[..end])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireClick {
    pub y: usize,
    pub x: usize,
    pub positive: bool,
}

impl From<Click> for WireClick {
    fn from(c: Click) -> Self {
        Self { y: c.row, x: c.col, positive: c.is_positive() }
    }
}

impl From<WireClick> for Click {
    fn from(c: WireClick) -> Self {
        let polarity = if c.positive { Polarity::Positive } else { Polarity::Negative };
        Click { row: c.y, col: c.x, polarity }
    }
}

/// Little-endian row-major samples, channels interleaved, base64 encoded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub bits: u8,
    pub data: String,
}

impl Raster {
    /// Quantise `[0, 1]` values to 8 or 16 bits.
    pub fn encode(t: &Tensor3, bits: u8) -> Self {
        let bytes: Vec<u8> = match bits {
            8 => t.data().iter().map(|&v| (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8).collect(),
            _ => t
                .data()
                .iter()
                .flat_map(|&v| ((f64::from(v) * 65535.0).round().clamp(0.0, 65535.0) as u16).to_le_bytes())
                .collect(),
        };
        Self { h: t.height(), w: t.width(), channels: t.channels(), bits: if bits == 8 { 8 } else { 16 }, data: BASE64.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Tensor3, String> {
        let bytes = BASE64.decode(&self.data).map_err(|e| format!("data: {e}"))?;
        let n = self.h * self.w * self.channels;
        let values: Vec<f32> = match self.bits {
            8 if bytes.len() == n => bytes.iter().map(|&b| (f64::from(b) / 255.0) as f32).collect(),
            16 if bytes.len() == 2 * n => {
                bytes.chunks_exact(2).map(|b| (f64::from(u16::from_le_bytes([b[0], b[1]])) / 65535.0) as f32).collect()
            }
            8 | 16 => return Err(format!("data: {} bytes for {n} samples of {} bits", bytes.len(), self.bits)),
            other => return Err(format!("bits: unsupported depth {other}")),
        };
        Tensor3::new(self.h, self.w, self.channels, values).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HostMessage {
    Hello { resolution: [usize; 2], modalities: Vec<String> },
    Prepare { image_id: String, tensors: BTreeMap<String, Raster> },
    Predict { image_id: String, clicks: Vec<WireClick>, prev_mask: RleMask },
}

impl HostMessage {
    pub fn predict(request: &PredictRequest) -> Self {
        HostMessage::Predict {
            image_id: request.image_id.clone(),
            clicks: request.clicks.iter().copied().map(WireClick::from).collect(),
            prev_mask: RleMask::encode(&request.prev_mask),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("host messages serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, PredictorError> {
        serde_json::from_str(line).map_err(|e| protocol("<line>", e.to_string(), line))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ChildMessage {
    Ready,
    Prepared,
    Mask { mask: RleMask },
    Error { message: String },
}

impl ChildMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("child messages serialize")
    }
}

fn protocol(field: &str, message: impl Into<String>, raw: &str) -> PredictorError {
    PredictorError::Protocol { field: field.to_string(), message: message.into(), raw: excerpt(raw) }
}

fn usize_field(obj: &Value, field: &str, path: &str, raw: &str) -> Result<usize, PredictorError> {
    obj.get(field)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| protocol(path, "expected a non-negative integer", raw))
}

/// Validate an RLE object field by field so errors can name the culprit.
pub(crate) fn decode_rle(value: &Value, path: &str, raw: &str) -> Result<BinaryMask, PredictorError> {
    if !value.is_object() {
        return Err(protocol(path, "expected an object", raw));
    }
    let h = usize_field(value, "h", &format!("{path}.h"), raw)?;
    let w = usize_field(value, "w", &format!("{path}.w"), raw)?;
    let counts_path = format!("{path}.counts");
    let counts = value
        .get("counts")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol(&counts_path, "expected an array", raw))?
        .iter()
        .map(|v| v.as_u64().ok_or_else(|| protocol(&counts_path, "run lengths must be non-negative integers", raw)))
        .collect::<Result<Vec<u64>, _>>()?;
    RleMask { height: h, width: w, counts }.decode().map_err(|e| protocol(&counts_path, e.to_string(), raw))
}

/// Parse one line from the child, checking the message type and its fields.
pub fn decode_child_line(line: &str) -> Result<ChildMessage, PredictorError> {
    let value: Value = serde_json::from_str(line).map_err(|e| protocol("<line>", format!("invalid JSON: {e}"), line))?;
    let kind = value.get("type").and_then(Value::as_str).ok_or_else(|| protocol("type", "missing message type", line))?;
    match kind {
        "ready" => Ok(ChildMessage::Ready),
        "prepared" => Ok(ChildMessage::Prepared),
        "mask" => {
            let mask = value.get("mask").ok_or_else(|| protocol("mask", "missing", line))?;
            Ok(ChildMessage::Mask { mask: RleMask::encode(&decode_rle(mask, "mask", line)?) })
        }
        "error" => {
            let message = value.get("message").and_then(Value::as_str).unwrap_or("<no message>");
            Ok(ChildMessage::Error { message: message.to_string() })
        }
        other => Err(protocol("type", format!("unknown message type '{other}'"), line)),
    }
}
