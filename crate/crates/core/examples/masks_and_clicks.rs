//! Joint masks, IoU, run-length encoding and the click simulator.
//!
//! `cargo run -p mmms --example masks_and_clicks`

use mmms::clicksim::{next_click, ErrorAnalysis};
use mmms::mask::{iou, BinaryMask, JointMask, RleMask};

fn rect(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| rows.contains(&r) && cols.contains(&c)).unwrap()
}

fn show(joint: &JointMask) {
    for r in 0..joint.height() {
        let row: String = (0..joint.width()).map(|c| char::from_digit(u32::from(joint.label(r, c)), 10).unwrap()).collect();
        println!("  {row}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, w) = (8, 12);
    let left = rect(h, w, 1..7, 1..6);
    let right = rect(h, w, 1..7, 6..11);
    let gt = JointMask::new(h, w, 2)?.insert_classical(1, &left)?.insert_classical(2, &right)?;
    println!("ground truth:");
    show(&gt);

    // a prediction for surface 2 that spills two columns into surface 1
    let spill = rect(h, w, 1..7, 4..11);
    let classical = gt.insert_classical(2, &spill)?;
    println!("classical insert of a spilling surface-2 mask:");
    show(&classical);
    println!("surface 1 IoU now {:.1}%", iou(&classical.extract(1)?, &left)?);

    // re-annotating surface 1 with the revisit rule also clears its stale pixels
    let shrunk = rect(h, w, 2..6, 1..4);
    let revisited = classical.insert_revisit(1, &shrunk)?;
    println!("revisit insert of a smaller surface-1 mask:");
    show(&revisited);

    let rle = RleMask::encode(&spill);
    println!("RLE of the spilling mask: {}", serde_json::to_string(&rle)?);
    assert_eq!(rle.decode()?, spill);

    let pred = classical.extract(1)?;
    let analysis = ErrorAnalysis::new(&pred, &left)?;
    println!("surface 1 error area: {} pixels", analysis.error_area());
    if let Some(click) = next_click(&pred, &left)? {
        println!("simulated click: {:?} at ({}, {})", click.polarity, click.row, click.col);
    }
    Ok(())
}
