//! The annotation HTTP API driven in-process: open a session, click, undo,
//! and ask for the worst surface.
//!
//! `cargo run -p mmms --example annotation_service`
//! (`mmms serve --dataset DIR` runs the same router on a real socket.)

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use mmms::dataset::{write_synthetic, OverlapMode, SynthConfig};
use mmms::predictor::PredictorSpec;
use mmms::service::{router, AppState, ServiceOptions};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Result<Value, Box<dyn std::error::Error>> {
    let builder = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    let response = app.clone().oneshot(builder.body(body)?).await?;
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await?;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes)? };
    println!("{method} {uri} -> {status}");
    Ok(value)
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = SynthConfig::new(5, 2, 3, OverlapMode::Adjacent);
    cfg.height = 48;
    cfg.width = 48;
    let dataset = write_synthetic(&cfg, dir.path())?;
    let image = dataset.ids()[0].clone();
    let app = router(AppState::new(dataset, ServiceOptions::new(PredictorSpec::Classical)));

    let session = call(&app, "POST", "/api/sessions", Some(json!({ "image_id": image }))).await?;
    let id = session["session_id"].as_str().ok_or("no session id")?.to_string();
    println!("  {} surfaces on a {}x{} image", session["surfaces"].as_array().map_or(0, Vec::len), session["height"], session["width"]);

    for (surface, y, x) in [(1, 10, 10), (2, 30, 30), (2, 40, 8)] {
        let click = json!({ "surface": surface, "y": y, "x": x, "positive": true });
        let r = call(&app, "POST", &format!("/api/sessions/{id}/clicks"), Some(click)).await?;
        println!("  surface {surface}: IoU {:.1}, average {:.1}", r["iou"].as_f64().unwrap_or(0.0), r["avg_iou"].as_f64().unwrap_or(0.0));
    }
    let undone = call(&app, "POST", &format!("/api/sessions/{id}/undo"), None).await?;
    println!("  after undo: {} clicks in the log", undone["log_len"]);
    let worst = call(&app, "POST", &format!("/api/sessions/{id}/select-worst"), None).await?;
    println!("  worst surface: {}", worst["surface"]);
    let log = call(&app, "GET", &format!("/api/sessions/{id}/log"), None).await?;
    println!("  click log: {log}");
    Ok(())
}
