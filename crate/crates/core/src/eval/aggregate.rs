use super::{EvalConfig, EvalError, MultiSurfaceRunResult, PhaseTiming, SurfaceRunResult};
use crate::report::{
    EvalReport, Fingerprints, ImageMultiSummary, ImageSummary, Metrics, MultiSurfaceMetrics, NocValue, Protocol,
    TimingReport, SCHEMA_VERSION,
};

/// Everything measured on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub image_id: String,
    /// Single-surface runs (phase 1 under the multi protocol).
    pub noc_runs: Vec<SurfaceRunResult>,
    pub multi: Option<MultiSurfaceRunResult>,
    pub timing: PhaseTiming,
}

/// Clicks needed to first reach `theta` in `trace`, `n_max` if never.
pub fn noc_at(trace: &[f64], theta: f64, n_max: usize) -> usize {
    trace.iter().position(|&v| v >= theta).map_or(n_max, |i| (i + 1).min(n_max))
}

pub fn aggregate(
    results: &[ImageResult],
    cfg: &EvalConfig,
    protocol: Protocol,
    noc_thresholds: &[f64],
    fingerprints: Fingerprints,
) -> Result<EvalReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let runs: Vec<&SurfaceRunResult> = results.iter().flat_map(|r| &r.noc_runs).collect();
    if runs.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let surfaces = runs.len();
    let noc = noc_thresholds
        .iter()
        .map(|&theta| {
            let clicks: Vec<usize> = runs.iter().map(|r| noc_at(&r.iou_trace, theta, cfg.n_max)).collect();
            NocValue {
                theta,
                noc: clicks.iter().sum::<usize>() as f64 / surfaces as f64,
                failures: runs.iter().filter(|r| !r.iou_trace.iter().any(|&v| v >= theta)).count(),
            }
        })
        .collect();

    let multi = if protocol == Protocol::Multi {
        let ms: Vec<&MultiSurfaceRunResult> = results.iter().filter_map(|r| r.multi.as_ref()).collect();
        let ms_surfaces: usize = ms.iter().map(|m| m.per_surface_clicks.len()).sum();
        let total_clicks: usize = ms.iter().map(|m| m.total_clicks()).sum();
        let failures: usize = ms.iter().map(|m| m.failures()).sum();
        Some(MultiSurfaceMetrics {
            theta_iou: cfg.theta_iou,
            theta_avg: cfg.theta_avg,
            nocms: total_clicks as f64 / ms_surfaces.max(1) as f64,
            frms: 100.0 * failures as f64 / ms_surfaces.max(1) as f64,
            failures,
            revisits: ms.iter().map(|m| m.revisit_count).sum(),
            total_clicks,
        })
    } else {
        None
    };

    let images = results
        .iter()
        .map(|r| ImageSummary {
            image_id: r.image_id.clone(),
            surfaces: r.noc_runs.len() as u16,
            clicks: r.noc_runs.iter().map(|s| s.clicks_used).collect(),
            succeeded: r.noc_runs.iter().map(|s| s.succeeded).collect(),
            multi: r.multi.as_ref().map(|m| ImageMultiSummary {
                accumulated_clicks: m.per_surface_clicks.clone(),
                failed: m.per_surface_failed.clone(),
                revisit_order: m.revisit_order.clone(),
                final_ious: m.final_ious.clone(),
                final_avg_iou: m.final_avg_iou,
            }),
        })
        .collect();

    let mut timing = PhaseTiming::default();
    for r in results {
        timing.merge(&r.timing);
    }
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION.to_string(),
        protocol,
        config: cfg.clone(),
        metrics: Metrics { images: results.len(), surfaces, noc, multi },
        images,
        errors: Vec::new(),
        fingerprints,
        timing: TimingReport::new(timing.feature.as_secs_f64(), timing.click.as_secs_f64(), timing.clicks, results.len()),
    })
}
