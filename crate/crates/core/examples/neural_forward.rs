//! The forward-only network behind the predictor interface. Features are
//! computed once per image; clicks only re-run the interaction branch.
//!
//! `cargo run -p mmms --example neural_forward`

use std::time::Instant;

use mmms::dataset::{generate_synthetic, OverlapMode, SynthConfig};
use mmms::eval::{run_single_surface, EvalConfig};
use mmms::predictor::{NeuralPredictor, Predictor};
use mmms_nn::{MmmsNet, NetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SynthConfig::new(3, 1, 2, OverlapMode::Adjacent);
    cfg.height = 48;
    cfg.width = 48;
    let sample = generate_synthetic(&cfg)?.remove(0);

    let net = MmmsNet::with_stub_backbone(NetConfig::tiny(vec![1]), 11)?;
    let counters = net.counters();
    let mut predictor = NeuralPredictor::new(net, vec!["depth".into()], 5)?;
    println!("{}", predictor.describe());

    let feature_time = predictor.prepare(&sample)?;
    let start = Instant::now();
    let run = run_single_surface(&mut predictor, &sample.id, 1, &sample.gt.extract(1)?, &EvalConfig::single(90.0, 10)?)?;
    let clicks = run.iou_trace.len();
    println!("feature phase {feature_time:?}, {clicks} clicks in {:?}", start.elapsed());
    println!("IoU trace (untrained weights): {:?}", run.iou_trace.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>());
    println!("call counts: {:?}", counters.snapshot());
    Ok(())
}
