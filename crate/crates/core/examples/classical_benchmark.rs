//! Generate a synthetic dataset and benchmark the classical predictor under
//! both protocols.
//!
//! `cargo run -p mmms --example classical_benchmark`

use mmms::dataset::{write_synthetic, OverlapMode, SynthConfig};
use mmms::eval::{evaluate_dataset, EvalConfig, HarnessOptions, Protocol};
use mmms::predictor::{ClassicalPredictor, Predictor, PredictorError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = SynthConfig::new(7, 10, 3, OverlapMode::Adjacent);
    cfg.height = 64;
    cfg.width = 64;
    let dataset = write_synthetic(&cfg, dir.path())?;
    println!("dataset: {} images under {}", dataset.ids().len(), dir.path().display());

    let factory = || -> Result<Box<dyn Predictor>, PredictorError> { Ok(Box::new(ClassicalPredictor::default())) };

    let mut single = HarnessOptions::new(Protocol::Single, EvalConfig::single(90.0, 20)?);
    single.noc_thresholds = vec![80.0, 85.0];
    let report = evaluate_dataset(&dataset, &factory, &single)?;
    for (metric, value) in report.metric_rows() {
        println!("  {metric:<32} {value}");
    }

    let multi = HarnessOptions::new(Protocol::Multi, EvalConfig::new(80.0, 70.0, 20)?);
    let report = evaluate_dataset(&dataset, &factory, &multi)?;
    let ms = report.metrics.multi.expect("multi protocol reports multi-surface metrics");
    println!("NoCMS@(80,70) = {:.3}, FRMS = {:.1}%, revisits = {}", ms.nocms, ms.frms, ms.revisits);
    Ok(())
}
