//! The multi-surface protocol on a scripted two-surface conflict: annotating
//! the second surface damages the first, which is then revisited.
//!
//! `cargo run -p mmms --example multi_surface_revisit`

use mmms::eval::{run_multi_surface, EvalConfig};
use mmms::mask::{BinaryMask, JointMask};
use mmms::predictor::{OracleScript, ScriptedOracle};

fn rect(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| rows.contains(&r) && cols.contains(&c)).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, w) = (10, 12);
    let thin = rect(h, w, 0..h, 0..2);
    let wide = rect(h, w, 0..h, 2..10);
    let gt = JointMask::new(h, w, 2)?.insert_classical(1, &thin)?.insert_classical(2, &wide)?;

    // surface 1 is found on the second click; surface 2's prediction takes
    // one column of surface 1 with it
    let script = OracleScript::new()
        .with("img", 1, vec![rect(h, w, 0..5, 0..2), thin.clone()])?
        .with("img", 2, vec![rect(h, w, 0..h, 1..10)])?;
    let mut oracle = ScriptedOracle::new(script);
    let result = run_multi_surface(&mut oracle, "img", &gt, &EvalConfig::new(80.0, 70.0, 20)?)?;

    for run in &result.phase1 {
        println!("phase 1, surface {}: IoU trace {:?}", run.surface, run.iou_trace);
    }
    println!("revisited surfaces: {:?}", result.revisit_order);
    println!("accumulated clicks: {:?} (total {})", result.per_surface_clicks, result.total_clicks());
    println!("final IoUs: {:?}, average {:.1}", result.final_ious, result.final_avg_iou);
    Ok(())
}
