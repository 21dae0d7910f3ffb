//! Dataset-level evaluation with a pool of workers, one predictor each.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{aggregate, run_multi_surface, run_single_surface, EvalConfig, EvalError, ImageResult, Timed};
use crate::dataset::{Dataset, Sample};
use crate::predictor::{Predictor, PredictorError};
use crate::report::{config_fingerprint, sha256_hex, EvalReport, Fingerprints, ImageError};

pub use crate::report::Protocol;

#[derive(Clone, Debug, PartialEq)]
pub struct HarnessOptions {
    pub protocol: Protocol,
    pub cfg: EvalConfig,
    /// Extra NoC thresholds; `theta_iou` is always included.
    pub noc_thresholds: Vec<f64>,
    pub workers: usize,
}

impl HarnessOptions {
    pub fn new(protocol: Protocol, cfg: EvalConfig) -> Self {
        Self { protocol, cfg, noc_thresholds: Vec::new(), workers: 1 }
    }

    /// Sorted, deduplicated thresholds including `theta_iou`.
    pub fn thresholds(&self) -> Result<Vec<f64>, EvalError> {
        let mut t = self.noc_thresholds.clone();
        t.push(self.cfg.theta_iou);
        if let Some(bad) = t.iter().find(|&&v| !(v > 0.0 && v <= self.cfg.theta_iou)) {
            return Err(EvalError::Config(format!(
                "NoC threshold {bad} must lie in (0, theta_iou={}]",
                self.cfg.theta_iou
            )));
        }
        t.sort_by(f64::total_cmp);
        t.dedup();
        Ok(t)
    }
}

/// Prepare `predictor` for `sample` and run the chosen protocol on it.
pub fn evaluate_image(
    predictor: &mut dyn Predictor,
    sample: &Sample,
    protocol: Protocol,
    cfg: &EvalConfig,
) -> Result<ImageResult, EvalError> {
    let mut timed = Timed::new(predictor);
    timed
        .prepare(sample)
        .map_err(|source| EvalError::Predictor { image: sample.id.clone(), surface: 0, source })?;
    let (noc_runs, multi) = match protocol {
        Protocol::Single => {
            let mut runs = Vec::with_capacity(usize::from(sample.surface_count()));
            for k in sample.gt.surface_ids() {
                runs.push(run_single_surface(&mut timed, &sample.id, k, &sample.gt.extract(k)?, cfg)?);
            }
            (runs, None)
        }
        Protocol::Multi => {
            let m = run_multi_surface(&mut timed, &sample.id, &sample.gt, cfg)?;
            (m.phase1.clone(), Some(m))
        }
    };
    Ok(ImageResult { image_id: sample.id.clone(), noc_runs, multi, timing: timed.timing })
}

type Factory<'a> = dyn Fn() -> Result<Box<dyn Predictor>, PredictorError> + Sync + 'a;

/// Evaluate every image of `dataset`. Images are distributed over
/// `opts.workers` threads, each with its own predictor from `factory`;
/// results are ordered as in the manifest regardless of scheduling. A
/// predictor failure on one image is recorded in the report's `errors` and
/// the remaining images still run. Dataset errors abort.
pub fn evaluate_dataset(dataset: &Dataset, factory: &Factory<'_>, opts: &HarnessOptions) -> Result<EvalReport, EvalError> {
    opts.cfg.validate()?;
    let thresholds = opts.thresholds()?;
    let ids = dataset.ids();
    let workers = opts.workers.clamp(1, ids.len());
    let first = factory().map_err(EvalError::PredictorInit)?;
    let description = first.describe();
    let mut predictors = vec![first];
    for _ in 1..workers {
        predictors.push(factory().map_err(EvalError::PredictorInit)?);
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ImageResult, EvalError>>>> = Mutex::new((0..ids.len()).map(|_| None).collect());
    let fatal: Mutex<Option<EvalError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for mut predictor in predictors {
            let (next, slots, fatal) = (&next, &slots, &fatal);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= ids.len() || fatal.lock().expect("lock").is_some() {
                    break;
                }
                let sample = match dataset.load_sample(&ids[i]) {
                    Ok(s) => s,
                    Err(e) => {
                        fatal.lock().expect("lock").get_or_insert(EvalError::Dataset(e));
                        break;
                    }
                };
                let result = evaluate_image(&mut predictor, &sample, opts.protocol, &opts.cfg);
                slots.lock().expect("lock")[i] = Some(result);
            });
        }
    });
    if let Some(e) = fatal.into_inner().expect("lock") {
        return Err(e);
    }

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (id, slot) in ids.iter().zip(slots.into_inner().expect("lock")) {
        match slot.expect("every image visited") {
            Ok(r) => results.push(r),
            Err(e @ (EvalError::Predictor { .. } | EvalError::PredictionSize { .. })) => {
                errors.push(ImageError { image_id: id.clone(), message: e.to_string() })
            }
            Err(e) => return Err(e),
        }
    }
    let fingerprints = Fingerprints {
        dataset: dataset.fingerprint()?,
        predictor: sha256_hex(description.as_bytes()),
        config: config_fingerprint(&opts.cfg, opts.protocol, &thresholds),
    };
    if results.is_empty() {
        return Err(EvalError::AllImagesFailed(errors));
    }
    let mut report = aggregate(&results, &opts.cfg, opts.protocol, &thresholds, fingerprints)?;
    report.errors = errors;
    Ok(report)
}
