//! Protocol invariants on random ground truths and random scripted oracles.

use mmms::eval::{run_multi_surface, run_single_surface, EvalConfig};
use mmms::mask::{BinaryMask, JointMask};
use mmms::predictor::{OracleScript, ScriptedOracle};
use proptest::prelude::*;

mod common;
use common::simulate;

#[derive(Debug, Clone)]
struct Case {
    gt: JointMask,
    scripts: Vec<Vec<BinaryMask>>,
    theta: f64,
    theta_avg: f64,
    n_max: usize,
}

fn case() -> impl Strategy<Value = Case> {
    (3..10usize, 3..10usize, 1..=4u16).prop_flat_map(|(h, w, l)| {
        let n = h * w;
        let labels = prop::collection::vec(0..=l, n).prop_map(move |mut v| {
            // every surface owns at least one pixel
            for k in 1..=l {
                v[usize::from(k - 1)] = k;
            }
            v
        });
        let flips = prop::collection::vec(
            prop::collection::vec((prop::sample::select(vec![0.0, 0.05, 0.2, 0.5]), prop::collection::vec(0.0..1.0f64, n)), 1..5),
            usize::from(l),
        );
        let thetas = (prop::sample::select(vec![60.0, 80.0, 90.0]), prop::sample::select(vec![0.0, 10.0, 20.0]));
        (labels, flips, thetas, 1..8usize).prop_map(move |(labels, flips, (theta, gap), n_max)| {
            let gt = JointMask::from_labels(h, w, l, labels).unwrap();
            let scripts = flips
                .iter()
                .enumerate()
                .map(|(i, per_call)| {
                    let g = gt.extract(i as u16 + 1).unwrap();
                    per_call
                        .iter()
                        .map(|(p, noise)| {
                            let bits = g.bits().iter().zip(noise).map(|(&b, &u)| if u < *p { !b } else { b }).collect();
                            BinaryMask::from_bits(h, w, bits).unwrap()
                        })
                        .collect()
                })
                .collect();
            Case { gt, scripts, theta, theta_avg: theta - gap, n_max }
        })
    })
}

fn oracle(c: &Case) -> ScriptedOracle {
    let mut script = OracleScript::new();
    for (i, masks) in c.scripts.iter().enumerate() {
        script.insert("img", i as u16 + 1, masks.clone()).unwrap();
    }
    ScriptedOracle::new(script)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn multi_surface_matches_reference_and_invariants(c in case()) {
        let cfg = EvalConfig::new(c.theta, c.theta_avg, c.n_max).unwrap();
        let l = usize::from(c.gt.surface_count());
        let result = run_multi_surface(&mut oracle(&c), "img", &c.gt, &cfg).unwrap();

        let plain: Vec<Vec<Vec<bool>>> =
            c.scripts.iter().map(|ms| ms.iter().map(|m| m.bits().to_vec()).collect()).collect();
        let expected = simulate(c.gt.labels(), &plain, c.theta, c.theta_avg, c.n_max);
        prop_assert_eq!(&result.per_surface_clicks, &expected.clicks);
        prop_assert_eq!(&result.per_surface_failed, &expected.failed);
        prop_assert_eq!(&result.revisit_order, &expected.revisits);
        prop_assert_eq!(&result.final_ious, &expected.final_ious);

        prop_assert!(result.total_clicks() <= l * c.n_max);
        for (k, phase1) in result.phase1.iter().enumerate() {
            // phase 1 is the single-surface loop verbatim
            let single = run_single_surface(&mut oracle(&c), "img", k as u16 + 1, &c.gt.extract(k as u16 + 1).unwrap(), &cfg).unwrap();
            prop_assert_eq!(phase1, &single);
            prop_assert!(result.per_surface_clicks[k] >= single.clicks_used);
            prop_assert!(result.per_surface_clicks[k] <= c.n_max);
            prop_assert_eq!(single.succeeded, single.iou_trace.last().is_some_and(|&v| v >= c.theta));
            prop_assert!(single.clicks_used <= c.n_max);
        }
        // termination: average reached, or nothing left to improve
        let done = result.final_avg_iou >= c.theta_avg
            || result.final_ious.iter().zip(&result.per_surface_failed).all(|(&v, &f)| f || v >= c.theta);
        prop_assert!(done);
        prop_assert_eq!(result.revisit_count, result.revisit_order.len());
    }
}
