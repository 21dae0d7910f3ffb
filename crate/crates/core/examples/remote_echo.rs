//! A predictor in a child process speaking the line-delimited JSON protocol.
//! The example re-launches itself as an echo child that returns the previous
//! mask it is sent.
//!
//! `cargo run -p mmms --example remote_echo`

use std::time::Duration;

use mmms::dataset::{generate_synthetic, OverlapMode, SynthConfig};
use mmms::mask::{BinaryMask, Click};
use mmms::predictor::remote::{run_echo_child, EchoFault};
use mmms::predictor::{PredictRequest, Predictor, PredictorError, RemoteConfig, RemotePredictor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::args().any(|a| a == "--child") {
        let fault = if std::env::args().any(|a| a == "--hang") { EchoFault::Hang } else { EchoFault::None };
        run_echo_child(std::io::stdin().lock(), std::io::stdout().lock(), &fault)?;
        return Ok(());
    }

    let mut cfg = SynthConfig::new(1, 1, 2, OverlapMode::Adjacent);
    cfg.height = 24;
    cfg.width = 32;
    let sample = generate_synthetic(&cfg)?.remove(0);
    let me = std::env::current_exe()?.display().to_string();
    let remote = |extra: &[&str], timeout| RemoteConfig {
        program: me.clone(),
        args: std::iter::once("--child").chain(extra.iter().copied()).map(String::from).collect(),
        timeout,
        resolution: [24, 32],
        modalities: vec!["depth".into()],
    };

    let prev = BinaryMask::from_fn(24, 32, |r, c| r < 12 && c < 20)?;
    let request = PredictRequest {
        image_id: sample.id.clone(),
        surface: 1,
        clicks: vec![Click::positive(5, 5), Click::negative(20, 30)],
        prev_mask: prev.clone(),
    };

    let mut echo = RemotePredictor::new(remote(&[], Duration::from_secs(10)))?;
    echo.prepare(&sample)?;
    let reply = echo.predict(&request)?;
    println!("echoed mask equals previous mask: {}", reply.probabilities.binarize(0.5) == prev);

    let mut hung = RemotePredictor::new(remote(&["--hang"], Duration::from_millis(200)))?;
    hung.prepare(&sample)?;
    match hung.predict(&request) {
        Err(e @ PredictorError::Timeout { .. }) => println!("hung child: {e}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
