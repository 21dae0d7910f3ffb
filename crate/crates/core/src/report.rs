//! Evaluation reports: versioned JSON with timing kept in its own object,
//! and a one-metric-per-row CSV rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::EvalConfig;

pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("unsupported report schema version '{0}' (this build reads {SCHEMA_MAJOR}.x)")]
    UnsupportedSchema(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Single,
    Multi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NocValue {
    pub theta: f64,
    pub noc: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSurfaceMetrics {
    pub theta_iou: f64,
    pub theta_avg: f64,
    pub nocms: f64,
    pub frms: f64,
    pub failures: usize,
    pub revisits: usize,
    pub total_clicks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub images: usize,
    pub surfaces: usize,
    /// Single-surface NoC per threshold (phase 1 for the multi protocol).
    pub noc: Vec<NocValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi: Option<MultiSurfaceMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMultiSummary {
    pub accumulated_clicks: Vec<usize>,
    pub failed: Vec<bool>,
    pub revisit_order: Vec<u16>,
    pub final_ious: Vec<f64>,
    pub final_avg_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub surfaces: u16,
    /// Single-surface clicks per surface (`n_max` for failures).
    pub clicks: Vec<usize>,
    pub succeeded: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi: Option<ImageMultiSummary>,
}

/// An image whose run was aborted; it contributes nothing to the metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageError {
    pub image_id: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub dataset: String,
    pub predictor: String,
    pub config: String,
}

/// Wall-clock statistics; excluded from determinism comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub feature_seconds: f64,
    pub click_seconds: f64,
    pub clicks: usize,
    pub images: usize,
    /// Click phase only.
    pub isolated_ms_per_click: f64,
    /// Feature phase spread over all clicks, plus the click phase.
    pub amortized_ms_per_click: f64,
}

impl TimingReport {
    pub fn new(feature_seconds: f64, click_seconds: f64, clicks: usize, images: usize) -> Self {
        let per_click = |s: f64| if clicks == 0 { 0.0 } else { s * 1000.0 / clicks as f64 };
        Self {
            feature_seconds,
            click_seconds,
            clicks,
            images,
            isolated_ms_per_click: per_click(click_seconds),
            amortized_ms_per_click: per_click(feature_seconds + click_seconds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: String,
    pub protocol: Protocol,
    pub config: EvalConfig,
    pub metrics: Metrics,
    pub images: Vec<ImageSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ImageError>,
    pub fingerprints: Fingerprints,
    pub timing: TimingReport,
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_fingerprint(cfg: &EvalConfig, protocol: Protocol, noc_thresholds: &[f64]) -> String {
    let text = serde_json::to_string(&(cfg, protocol, noc_thresholds)).expect("config serializes");
    sha256_hex(text.as_bytes())
}

fn fmt_theta(t: f64) -> String {
    format!("{t}")
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Parse a report, rejecting unknown major schema versions.
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ReportError::Malformed("missing schema_version".into()))?;
        let major = version.split('.').next().and_then(|m| m.parse::<u64>().ok());
        if major != Some(SCHEMA_MAJOR) {
            return Err(ReportError::UnsupportedSchema(version.to_string()));
        }
        serde_json::from_value(value).map_err(|e| ReportError::Malformed(e.to_string()))
    }

    /// `(metric, value)` rows in a fixed order; timing rows are prefixed `latency_`.
    pub fn metric_rows(&self) -> Vec<(String, String)> {
        let m = &self.metrics;
        let mut rows = vec![("images".to_string(), m.images.to_string()), ("surfaces".to_string(), m.surfaces.to_string())];
        for n in &m.noc {
            rows.push((format!("NoC@{}", fmt_theta(n.theta)), n.noc.to_string()));
            rows.push((format!("NoC_failures@{}", fmt_theta(n.theta)), n.failures.to_string()));
        }
        if let Some(ms) = &m.multi {
            let pair = format!("({},{})", fmt_theta(ms.theta_iou), fmt_theta(ms.theta_avg));
            rows.push((format!("NoCMS@{pair}"), ms.nocms.to_string()));
            rows.push((format!("FRMS@{pair}"), ms.frms.to_string()));
            rows.push((format!("MS_failures@{pair}"), ms.failures.to_string()));
            rows.push(("revisits".into(), ms.revisits.to_string()));
            rows.push(("total_clicks".into(), ms.total_clicks.to_string()));
        }
        rows.push(("latency_isolated_ms_per_click".into(), self.timing.isolated_ms_per_click.to_string()));
        rows.push(("latency_amortized_ms_per_click".into(), self.timing.amortized_ms_per_click.to_string()));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.metric_rows() {
            let _ = writeln!(out, "\"{k}\",{v}");
        }
        out
    }

    /// Write `path` as JSON and a sibling `.csv`.
    pub fn emit(&self, json_path: &Path) -> Result<std::path::PathBuf, ReportError> {
        let write = |p: &Path, text: String| {
            std::fs::write(p, text).map_err(|source| ReportError::Write { path: p.display().to_string(), source })
        };
        if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| ReportError::Write { path: dir.display().to_string(), source })?;
        }
        write(json_path, self.to_json())?;
        let csv_path = json_path.with_extension("csv");
        write(&csv_path, self.to_csv())?;
        Ok(csv_path)
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ReportError::Read { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// JSON with the timing object zeroed, for determinism comparisons.
    pub fn to_json_without_timing(&self) -> String {
        Self { timing: TimingReport::default(), ..self.clone() }.to_json()
    }
}
