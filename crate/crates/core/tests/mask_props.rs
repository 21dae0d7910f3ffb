//! Property tests for mask algebra and click simulation against brute-force oracles.

use mmms::clicksim::{connected_components, distance_to_complement, next_click, ErrorAnalysis};
use mmms::mask::{encode_clicks, iou, BinaryMask, Click, JointMask, Polarity, RleMask};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryMask::from_bits(h, w, bits).unwrap())
    })
}

fn mask_pair(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        let m = move || prop::collection::vec(any::<bool>(), h * w).prop_map(move |b| BinaryMask::from_bits(h, w, b).unwrap());
        (m(), m())
    })
}

/// Independent per-pixel counter.
fn brute_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            if x && y {
                inter += 1;
            }
            if x || y {
                union += 1;
            }
        }
    }
    if union == 0 {
        100.0
    } else {
        f64::from(inter) / f64::from(union) * 100.0
    }
}

/// Per-pixel case analysis of both insertion rules.
fn oracle_insert(labels: &[u16], k: u16, mask: &[bool], revisit: bool) -> Vec<u16> {
    labels
        .iter()
        .zip(mask)
        .map(|(&l, &m)| {
            if m {
                k
            } else if revisit && l == k {
                0
            } else {
                l
            }
        })
        .collect()
}

fn joint_triple() -> impl Strategy<Value = (JointMask, u16, BinaryMask)> {
    (1..=24usize, 1..=24usize, 1..=6u16).prop_flat_map(|(h, w, l)| {
        (
            prop::collection::vec(0..=l, h * w),
            1..=l,
            prop::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(labels, k, bits)| {
                (JointMask::from_labels(h, w, l, labels).unwrap(), k, BinaryMask::from_bits(h, w, bits).unwrap())
            })
    })
}

fn click_strategy(h: usize, w: usize) -> impl Strategy<Value = Click> {
    (0..h, 0..w, any::<bool>()).prop_map(|(row, col, p)| Click {
        row,
        col,
        polarity: if p { Polarity::Positive } else { Polarity::Negative },
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn iou_matches_brute_force((a, b) in mask_pair(64)) {
        let v = iou(&a, &b).unwrap();
        prop_assert_eq!(v, brute_iou(&a, &b));
        prop_assert_eq!(v, iou(&b, &a).unwrap());
        prop_assert!((0.0..=100.0).contains(&v));
        prop_assert_eq!(iou(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn insert_rules_match_per_pixel_oracle((joint, k, mask) in joint_triple()) {
        let classical = joint.insert_classical(k, &mask).unwrap();
        prop_assert_eq!(classical.labels(), &oracle_insert(joint.labels(), k, mask.bits(), false)[..]);
        prop_assert!(classical.extract(k).unwrap().count() >= joint.extract(k).unwrap().count());

        let revisit = joint.insert_revisit(k, &mask).unwrap();
        prop_assert_eq!(revisit.labels(), &oracle_insert(joint.labels(), k, mask.bits(), true)[..]);
        prop_assert_eq!(revisit.extract(k).unwrap(), mask.clone());

        for j in joint.surface_ids() {
            let expected: Vec<bool> = revisit.labels().iter().map(|&l| l == j).collect();
            let extracted = revisit.extract(j).unwrap();
            prop_assert_eq!(extracted.bits(), &expected[..]);
        }
    }

    #[test]
    fn rle_round_trip(m in mask_strategy(40)) {
        let rle = RleMask::encode(&m);
        prop_assert_eq!(rle.counts.iter().sum::<u64>(), (m.height() * m.width()) as u64);
        prop_assert!(rle.counts.iter().skip(1).all(|&c| c > 0));
        let json = serde_json::to_string(&rle).unwrap();
        let back: RleMask = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.decode().unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn click_encoding_is_order_invariant(
        (h, w, clicks, radius) in (1..30usize, 1..30usize).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(click_strategy(h, w), 0..8), 0..6u32)
        })
    ) {
        let maps = encode_clicks(&clicks, h, w, radius).unwrap();
        let mut reversed = clicks.clone();
        reversed.reverse();
        prop_assert_eq!(&maps, &encode_clicks(&reversed, h, w, radius).unwrap());
        // every set pixel is inside the disk of a click with matching polarity
        for (map, pol) in [(&maps.positive, Polarity::Positive), (&maps.negative, Polarity::Negative)] {
            for r in 0..h {
                for c in 0..w {
                    let near = clicks.iter().filter(|k| k.polarity == pol).any(|k| {
                        let (dr, dc) = (r as f64 - k.row as f64, c as f64 - k.col as f64);
                        (dr * dr + dc * dc).sqrt() <= f64::from(radius)
                    });
                    prop_assert_eq!(map.get(r, c), near);
                }
            }
        }
    }

    #[test]
    fn components_partition_set_pixels(m in mask_strategy(24)) {
        let comps = connected_components(&m);
        let mut seen = vec![0u8; m.len()];
        for comp in &comps {
            for &i in &comp.pixels {
                seen[i] += 1;
            }
        }
        for (i, &bit) in m.bits().iter().enumerate() {
            prop_assert_eq!(seen[i], u8::from(bit));
        }
    }

    #[test]
    fn next_click_lands_on_an_error((pred, gt) in mask_pair(24)) {
        let click = next_click(&pred, &gt).unwrap();
        prop_assert_eq!(click.is_none(), pred == gt);
        if let Some(c) = click {
            let (p, g) = (pred.get(c.row, c.col), gt.get(c.row, c.col));
            prop_assert!(p != g);
            prop_assert_eq!(c.is_positive(), g);
            prop_assert_eq!(Some(c), next_click(&pred, &gt).unwrap());
            // the click sits in a largest error component
            let analysis = ErrorAnalysis::new(&pred, &gt).unwrap();
            let (largest, _) = analysis.largest().unwrap();
            prop_assert!(largest.pixels.contains(&(c.row * gt.width() + c.col)));
        }
    }

    #[test]
    fn first_click_on_empty_prediction_is_positive_inside_gt(gt in mask_strategy(24)) {
        prop_assume!(!gt.is_empty());
        let empty = BinaryMask::new(gt.height(), gt.width()).unwrap();
        let c = next_click(&empty, &gt).unwrap().unwrap();
        prop_assert!(c.is_positive() && gt.get(c.row, c.col));
    }

    #[test]
    fn correcting_within_disk_strictly_shrinks_error((pred, gt) in mask_pair(20), radius in 0..4u32) {
        let mut pred = pred;
        let error = |p: &BinaryMask| p.bits().iter().zip(gt.bits()).filter(|(a, b)| a != b).count();
        let mut rounds = 0;
        while let Some(click) = next_click(&pred, &gt).unwrap() {
            let before = error(&pred);
            let disk = encode_clicks(&[Click::positive(click.row, click.col)], gt.height(), gt.width(), radius).unwrap();
            for (r, c) in disk.positive.iter_set().collect::<Vec<_>>() {
                pred.set(r, c, gt.get(r, c));
            }
            prop_assert!(error(&pred) < before);
            rounds += 1;
            prop_assert!(rounds <= gt.len());
        }
    }
}

/// Squared distance to the nearest pixel outside `mask`, border counting as outside.
fn brute_distance(mask: &BinaryMask, r: usize, c: usize) -> f64 {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let mut best = f64::INFINITY;
    for rr in -1..=h {
        for cc in -1..=w {
            let inside = (0..h).contains(&rr) && (0..w).contains(&cc) && mask.get(rr as usize, cc as usize);
            if !inside {
                let d = (((rr - r as i64).pow(2) + (cc - c as i64).pow(2)) as f64).sqrt();
                best = best.min(d);
            }
        }
    }
    best
}

#[test]
fn deepest_point_matches_brute_force_with_row_major_ties() {
    for size in 3..30usize {
        let (h, w) = (size + 6, size + 9);
        let shape = if size % 2 == 1 {
            let (cr, cc, rad) = (h as f64 / 2.0 - 0.5, w as f64 / 2.0 - 0.5, size as f64 / 2.0);
            BinaryMask::from_fn(h, w, |r, c| ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt() <= rad).unwrap()
        } else {
            BinaryMask::from_fn(h, w, |r, c| (2..3 + size).contains(&r) && (3..2 + size).contains(&c)).unwrap()
        };
        let mut best = (f64::MIN, 0usize, 0usize);
        for r in 0..h {
            for c in 0..w {
                if shape.get(r, c) {
                    let d = brute_distance(&shape, r, c);
                    if d > best.0 {
                        best = (d, r, c);
                    }
                }
            }
        }
        let dist = distance_to_complement(&shape);
        assert_eq!(dist[best.1 * w + best.2], best.0);
        let click = next_click(&BinaryMask::new(h, w).unwrap(), &shape).unwrap().unwrap();
        assert_eq!((click.row, click.col), (best.1, best.2), "size {size}");
    }
}
