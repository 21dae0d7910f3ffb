//! Predictor backends through the public trait.

use std::time::Duration;

use mmms::dataset::{generate_synthetic, write_dataset, OverlapMode, Sample, SynthConfig};
use mmms::eval::{evaluate_image, run_single_surface, EvalConfig, Protocol};
use mmms::mask::{BinaryMask, Click};
use mmms::predictor::{
    BuildContext, ClassicalPredictor, NeuralPredictor, OracleScript, PredictRequest, Predictor, PredictorError,
    PredictorSpec, ProbabilityMap,
};
use mmms_nn::{MmmsNet, NetConfig};
use proptest::prelude::*;

fn sample(seed: u64, size: usize) -> Sample {
    let mut cfg = SynthConfig::new(seed, 1, 3, OverlapMode::Adjacent);
    cfg.height = size;
    cfg.width = size;
    generate_synthetic(&cfg).unwrap().remove(0)
}

fn clicks_strategy(n: usize) -> impl Strategy<Value = Vec<Click>> {
    (
        (0..n, 0..n),
        prop::collection::vec((0..n, 0..n, any::<bool>()), 0..6),
    )
        .prop_map(|((r, c), rest)| {
            let mut v = vec![Click::positive(r, c)];
            v.extend(rest.into_iter().map(|(r, c, p)| if p { Click::positive(r, c) } else { Click::negative(r, c) }));
            v
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn classical_output_ignores_click_order(clicks in clicks_strategy(32), rotate in 0usize..6) {
        let s = sample(8, 32);
        let mut p = ClassicalPredictor::default();
        p.prepare(&s).unwrap();
        let prev = BinaryMask::new(32, 32).unwrap();
        let req = |clicks: Vec<Click>| PredictRequest { image_id: s.id.clone(), surface: 1, clicks, prev_mask: prev.clone() };
        let a = p.predict(&req(clicks.clone())).unwrap().probabilities;
        let mut shuffled = clicks.clone();
        shuffled.reverse();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        let b = p.predict(&req(shuffled)).unwrap().probabilities;
        prop_assert_eq!(a.values(), b.values());
        prop_assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
        // every seed keeps its own polarity unless a rival seed sits on the same pixel
        let mask = a.binarize(0.5);
        for c in &clicks {
            let rival = clicks.iter().any(|o| o.row == c.row && o.col == c.col && o.polarity != c.polarity);
            if !rival {
                prop_assert_eq!(mask.get(c.row, c.col), c.is_positive());
            }
        }
    }
}

#[test]
fn classical_requires_a_positive_click() {
    let s = sample(1, 24);
    let mut p = ClassicalPredictor::default();
    p.prepare(&s).unwrap();
    let req = PredictRequest {
        image_id: s.id.clone(),
        surface: 1,
        clicks: vec![Click::negative(3, 3)],
        prev_mask: BinaryMask::new(24, 24).unwrap(),
    };
    assert!(matches!(p.predict(&req), Err(PredictorError::NoPositiveClick)));
}

#[test]
fn neural_feature_phase_runs_once_per_image() {
    let s = sample(2, 48);
    let cfg = NetConfig::tiny(vec![1]);
    let net = MmmsNet::with_stub_backbone(cfg, 11).unwrap();
    let counters = net.counters();
    let mut p = NeuralPredictor::new(net, vec!["depth".into()], 5).unwrap();
    let eval = EvalConfig::single(100.0, 10).unwrap();

    let feature = p.prepare(&s).unwrap();
    assert!(feature > Duration::ZERO);
    let before = p.prepared().unwrap().f_mix.clone();
    let run = run_single_surface(&mut p, &s.id, 1, &s.gt.extract(1).unwrap(), &eval).unwrap();
    let counts = counters.snapshot();
    assert_eq!((counts.backbone, counts.parallel_fpn, counts.mmfuser), (1, 1, 1));
    assert_eq!(counts.patch_embed, run.iou_trace.len());
    assert_eq!(counts.csnet, run.iou_trace.len());
    assert_eq!(p.prepared().unwrap().f_mix, before);

    // a second image triggers exactly one more feature phase
    let other = Sample { id: "second".into(), ..sample(3, 48) };
    let result = evaluate_image(&mut p, &other, Protocol::Single, &eval).unwrap();
    let counts = counters.snapshot();
    assert_eq!((counts.backbone, counts.parallel_fpn, counts.mmfuser), (2, 2, 2));
    assert_eq!(result.timing.clicks, counts.csnet - run.iou_trace.len());
}

#[test]
fn neural_output_is_a_probability_map_at_sample_resolution() {
    let s = sample(4, 40);
    let net = MmmsNet::with_stub_backbone(NetConfig::tiny(vec![1]), 5).unwrap();
    let mut p = NeuralPredictor::new(net, vec!["depth".into()], 5).unwrap();
    p.prepare(&s).unwrap();
    let req = PredictRequest {
        image_id: s.id.clone(),
        surface: 1,
        clicks: vec![Click::positive(20, 20), Click::negative(2, 2)],
        prev_mask: BinaryMask::new(40, 40).unwrap(),
    };
    let a = p.predict(&req).unwrap().probabilities;
    assert_eq!(a.dims(), (40, 40));
    assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a, p.predict(&req).unwrap().probabilities);
    let mut wrong = req.clone();
    wrong.image_id = "other".into();
    assert!(matches!(p.predict(&wrong), Err(PredictorError::NotPrepared(_))));
}

#[test]
fn neural_rejects_missing_modality() {
    let mut s = sample(4, 32);
    s.modalities.clear();
    let net = MmmsNet::with_stub_backbone(NetConfig::tiny(vec![1]), 5).unwrap();
    let mut p = NeuralPredictor::new(net, vec!["depth".into()], 5).unwrap();
    assert!(matches!(p.prepare(&s), Err(PredictorError::MissingModality(m)) if m == "depth"));
}

#[test]
fn specs_round_trip_and_build() {
    for text in ["oracle:gt", "oracle:/tmp/script.json", "classical", "neural:seed=4", "neural:seed=1,size=64", "remote:prog --x"] {
        let spec: PredictorSpec = text.parse().unwrap();
        assert_eq!(spec.to_string().parse::<PredictorSpec>().unwrap(), spec);
    }
    for bad in ["", "oracle", "oracle:", "neural:depth=3", "remote:", "svm"] {
        assert!(bad.parse::<PredictorSpec>().is_err(), "{bad}");
    }

    let dir = tempfile::tempdir().unwrap();
    let s = sample(6, 24);
    let ds = write_dataset(&dir.path().join("ds"), std::slice::from_ref(&s)).unwrap();
    let gt1 = s.gt.extract(1).unwrap();
    let script = OracleScript::new().with(&s.id, 1, vec![BinaryMask::new(24, 24).unwrap(), gt1.clone()]).unwrap();
    let path = dir.path().join("script.json");
    std::fs::write(&path, script.to_json()).unwrap();
    assert_eq!(OracleScript::load(&path).unwrap(), script);

    let ctx = BuildContext {
        manifest: ds.manifest(),
        resolution: [24, 24],
        disk_radius: 5,
        remote_timeout: Duration::from_secs(1),
    };
    let spec: PredictorSpec = format!("oracle:{}", path.display()).parse().unwrap();
    let mut p = spec.build(&ctx).unwrap();
    p.prepare(&s).unwrap();
    let run = run_single_surface(p.as_mut(), &s.id, 1, &gt1, &EvalConfig::single(90.0, 20).unwrap()).unwrap();
    assert_eq!(run.clicks_used, 2);
    assert_eq!(run.iou_trace, vec![0.0, 100.0]);
}

#[test]
fn probability_maps_are_validated() {
    assert!(ProbabilityMap::new(1, 2, vec![0.0, 1.0]).is_ok());
    assert!(ProbabilityMap::new(1, 2, vec![0.0, 1.5]).is_err());
    assert!(ProbabilityMap::new(1, 2, vec![f32::NAN, 0.5]).is_err());
    assert!(ProbabilityMap::new(1, 2, vec![0.5]).is_err());
    // strictly above the threshold counts as foreground
    let m = ProbabilityMap::new(1, 3, vec![0.5, 0.50001, 0.2]).unwrap().binarize(0.5);
    assert_eq!(m.bits(), &[false, true, false]);
}
