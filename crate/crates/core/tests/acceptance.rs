//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p mmms --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use mmms::clicksim::{connected_components, next_click};
use mmms::dataset::{write_synthetic, Dataset, OverlapMode, SynthConfig};
use mmms::eval::{
    aggregate, evaluate_dataset, run_multi_surface, run_single_surface, EvalConfig, EvalError, HarnessOptions,
    ImageResult, Protocol,
};
use mmms::mask::{iou, BinaryMask, Click, JointMask, Polarity};
use mmms::predictor::{
    ClassicalPredictor, NeuralPredictor, OracleScript, PredictRequest, Predictor, PredictorError, RemoteConfig,
    RemotePredictor, ScriptedOracle,
};
use mmms::report::{EvalReport, Fingerprints};
use mmms_nn::attention::reduction_rate;
use mmms_nn::csnet::CsNet;
use mmms_nn::fuser::{CrossBlock, MmFuser};
use mmms_nn::init::ParamInit;
use mmms_nn::model::CallCounters;
use mmms_nn::patch_embed::MsPatchEmbed;
use mmms_nn::{BackboneFeatures, FeaturePyramid, FpnConfig, InverseParallelFpn, MmmsNet, NetConfig, ParallelFpn, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const BIN: &str = env!("CARGO_BIN_EXE_mmms");

const MASK_ORACLE_CASES: usize = 1000;
const MASK_ORACLE_BUDGET: Duration = Duration::from_secs(5);
const DEEPEST_SHAPES: usize = 50;
const MIXED_NOC: f64 = 26.0 / 3.0;
const MIXED_NOC_TOLERANCE: f64 = 0.0;
const DOMINANCE_SEEDS: u64 = 10;
const REMOTE_REQUESTS: usize = 1000;
const REMOTE_TIMEOUT: Duration = Duration::from_millis(300);
const NAN_SWEEP_SEEDS: u64 = 100;
const E2E_IMAGES: usize = 20;
const E2E_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e:?}"))
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let density = rng.random_range(0.0..1.0);
    BinaryMask::from_bits(h, w, (0..h * w).map(|_| rng.random_bool(density)).collect()).unwrap()
}

fn rect(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| rows.contains(&r) && cols.contains(&c)).unwrap()
}

fn synthetic(dir: &Path, seed: u64, count: usize, overlap: OverlapMode, size: usize) -> Dataset {
    let mut cfg = SynthConfig::new(seed, count, 3, overlap);
    cfg.height = size;
    cfg.width = size;
    write_synthetic(&cfg, dir).unwrap()
}

fn classical() -> Result<Box<dyn Predictor>, PredictorError> {
    Ok(Box::new(ClassicalPredictor::default()))
}

// ---- mask algebra ----

fn iou_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for i in 0..MASK_ORACLE_CASES {
        let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let (a, b) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
        let (mut inter, mut union) = (0u32, 0u32);
        for r in 0..h {
            for c in 0..w {
                inter += u32::from(a.get(r, c) && b.get(r, c));
                union += u32::from(a.get(r, c) || b.get(r, c));
            }
        }
        let expected = if union == 0 { 100.0 } else { f64::from(inter) / f64::from(union) * 100.0 };
        let got = ok(iou(&a, &b), "iou")?;
        ensure!(got.to_bits() == expected.to_bits(), "pair {i}: {got} != {expected}");
    }
    let t = start.elapsed();
    ensure!(t < MASK_ORACLE_BUDGET, "took {t:?}");
    Ok(format!("{MASK_ORACLE_CASES} pairs exact in {t:?}"))
}

fn joint_insert_extract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    for i in 0..MASK_ORACLE_CASES {
        let (h, w, l) = (rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=6u16));
        let labels: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..=l)).collect();
        let joint = JointMask::from_labels(h, w, l, labels.clone()).unwrap();
        let k = rng.random_range(1..=l);
        let m = random_mask(&mut rng, h, w);
        for revisit in [false, true] {
            let expected: Vec<u16> = labels
                .iter()
                .zip(m.bits())
                .map(|(&lab, &bit)| match (bit, revisit && lab == k) {
                    (true, _) => k,
                    (false, true) => 0,
                    (false, false) => lab,
                })
                .collect();
            let got = if revisit { joint.insert_revisit(k, &m) } else { joint.insert_classical(k, &m) };
            ensure!(ok(got, "insert")?.labels() == expected.as_slice(), "triple {i} revisit={revisit}");
        }
        for j in 1..=l {
            let ex = ok(joint.extract(j), "extract")?;
            ensure!(ex.bits().iter().zip(&labels).all(|(&b, &lab)| b == (lab == j)), "triple {i} extract {j}");
        }
    }
    let t = start.elapsed();
    ensure!(t < MASK_ORACLE_BUDGET, "took {t:?}");
    Ok(format!("{MASK_ORACLE_CASES} triples exact in {t:?}"))
}

/// Squared distance from `(r, c)` to the nearest pixel outside `mask`, the
/// frame beyond the border included.
fn brute_sq_distance(mask: &BinaryMask, r: usize, c: usize) -> i64 {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let mut best = i64::MAX;
    for rr in -1..=h {
        for cc in -1..=w {
            let inside = (0..h).contains(&rr) && (0..w).contains(&cc) && mask.get(rr as usize, cc as usize);
            if !inside {
                best = best.min((rr - r as i64).pow(2) + (cc - c as i64).pow(2));
            }
        }
    }
    best
}

/// The unique brute-force argmax, if there is one.
fn unique_deepest(mask: &BinaryMask) -> Option<(usize, usize)> {
    let mut best = (-1, Vec::new());
    for (r, c) in mask.iter_set() {
        let d = brute_sq_distance(mask, r, c);
        if d > best.0 {
            best = (d, vec![(r, c)]);
        } else if d == best.0 {
            best.1.push((r, c));
        }
    }
    (best.1.len() == 1).then(|| best.1[0])
}

fn crafted_shapes(rng: &mut ChaCha8Rng) -> impl Iterator<Item = BinaryMask> + '_ {
    let squares = (0..8).map(|i| {
        let side = 2 * i + 1;
        let off = 2 + i % 3;
        rect(side + 6, side + 5, off..off + side, 2..2 + side)
    });
    let discs = (1..12).map(|rad| {
        let size = 2 * rad + 5;
        let (cr, cc) = (rad + 2, rad + 3);
        BinaryMask::from_fn(size, size + 1, |r, c| {
            (r as i64 - cr as i64).pow(2) + (c as i64 - cc as i64).pow(2) <= (rad * rad) as i64
        })
        .unwrap()
    });
    let unions = std::iter::repeat_with(move || {
        let (h, w) = (rng.random_range(12..28), rng.random_range(12..28));
        let blobs: Vec<(i64, i64, i64)> = (0..rng.random_range(1..4))
            .map(|_| (rng.random_range(2..h as i64 - 2), rng.random_range(2..w as i64 - 2), rng.random_range(2..7i64)))
            .collect();
        BinaryMask::from_fn(h, w, |r, c| {
            blobs.iter().any(|&(br, bc, rad)| (r as i64 - br).pow(2) + (c as i64 - bc).pow(2) <= rad * rad)
        })
        .unwrap()
    });
    squares.chain(discs).chain(unions)
}

fn deepest_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for shape in crafted_shapes(&mut rng) {
        if checked == DEEPEST_SHAPES {
            break;
        }
        if connected_components(&shape).len() != 1 {
            continue;
        }
        let Some(expected) = unique_deepest(&shape) else { continue };
        let (h, w) = shape.dims();
        let click = ok(next_click(&BinaryMask::new(h, w).unwrap(), &shape), "next_click")?;
        let click = click.ok_or("no click on a non-empty error")?;
        ensure!(click.polarity == Polarity::Positive, "shape {checked}: negative click");
        ensure!((click.row, click.col) == expected, "shape {checked}: {:?} != {expected:?}", (click.row, click.col));
        checked += 1;
    }
    ensure!(checked == DEEPEST_SHAPES, "only {checked} shapes");
    Ok(format!("{checked} shapes exact"))
}

// ---- protocol ----

fn scripted_noc() -> Outcome {
    let (h, w) = (16, 16);
    let gt = rect(h, w, 3..13, 3..13);
    let cfg = ok(EvalConfig::single(90.0, 20), "config")?;
    let crossing_at = |k: usize| {
        let mut masks: Vec<BinaryMask> = (1..k).map(|i| rect(h, w, 3..3 + i, 3..13)).collect();
        masks.push(gt.clone());
        masks
    };
    for k in 1..=5 {
        let mut oracle = ScriptedOracle::new(ok(OracleScript::new().with("img", 1, crossing_at(k)), "script")?);
        let run = ok(run_single_surface(&mut oracle, "img", 1, &gt, &cfg), "run")?;
        ensure!(run.succeeded && run.clicks_used == k, "k={k}: {run:?}");
    }
    let never = vec![rect(h, w, 3..5, 3..13)];
    let mut oracle = ScriptedOracle::new(ok(OracleScript::new().with("img", 1, never.clone()), "script")?);
    let run = ok(run_single_surface(&mut oracle, "img", 1, &gt, &cfg), "run")?;
    ensure!(!run.succeeded && run.clicks_used == 20, "never-succeeding: {run:?}");

    let script = ok(
        OracleScript::new().with("img", 1, crossing_at(2)).and_then(|s| s.with("img", 2, crossing_at(4))).and_then(|s| s.with("img", 3, never)),
        "script",
    )?;
    let mut oracle = ScriptedOracle::new(script);
    let runs = (1..=3)
        .map(|k| run_single_surface(&mut oracle, "img", k, &gt, &cfg))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let image = ImageResult { image_id: "img".into(), noc_runs: runs, multi: None, timing: Default::default() };
    let fp = Fingerprints { dataset: "d".into(), predictor: "p".into(), config: "c".into() };
    let report = ok(aggregate(&[image], &cfg, Protocol::Single, &[90.0], fp), "aggregate")?;
    let noc = report.metrics.noc[0].noc;
    ensure!((noc - MIXED_NOC).abs() <= MIXED_NOC_TOLERANCE, "mixed NoC {noc}");
    ensure!(report.metrics.noc[0].failures == 1, "failures {}", report.metrics.noc[0].failures);
    Ok(format!("k=1..5 exact, never -> 20, mixed NoC {noc:.3}"))
}

fn disjoint_equivalence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = synthetic(dir.path(), 17, 10, OverlapMode::Disjoint, 64);
    let single = ok(
        evaluate_dataset(&ds, &classical, &HarnessOptions::new(Protocol::Single, EvalConfig::single(80.0, 20).unwrap())),
        "single",
    )?;
    let multi = ok(
        evaluate_dataset(&ds, &classical, &HarnessOptions::new(Protocol::Multi, EvalConfig::new(80.0, 70.0, 20).unwrap())),
        "multi",
    )?;
    let noc = single.metrics.noc[0].noc;
    let ms = multi.metrics.multi.ok_or("no multi-surface metrics")?;
    ensure!(ms.nocms == noc, "NoCMS {} != NoC {noc}", ms.nocms);
    ensure!(ms.revisits == 0, "{} revisits", ms.revisits);
    Ok(format!("NoCMS@(80,70) = NoC@80 = {noc:.3}, 0 revisits"))
}

fn dominance() -> Outcome {
    let opts = HarnessOptions::new(Protocol::Multi, EvalConfig::new(80.0, 70.0, 20).unwrap());
    let (mut images, mut revisits) = (0, 0);
    for seed in 0..DOMINANCE_SEEDS {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ds = synthetic(dir.path(), 100 + seed, 4, OverlapMode::Adjacent, 64);
        let report = ok(evaluate_dataset(&ds, &classical, &opts), "eval")?;
        let ms = report.metrics.multi.as_ref().ok_or("no multi-surface metrics")?;
        let noc = report.metrics.noc[0].noc;
        ensure!(ms.nocms >= noc, "seed {seed}: NoCMS {} < NoC {noc}", ms.nocms);
        for img in &report.images {
            let m = img.multi.as_ref().ok_or("no per-image multi summary")?;
            let total: usize = m.accumulated_clicks.iter().sum();
            let bound = usize::from(img.surfaces) * 20;
            ensure!(total <= bound, "seed {seed} {}: {total} > {bound}", img.image_id);
            ensure!(total >= img.clicks.iter().sum::<usize>(), "seed {seed} {}: fewer than phase 1", img.image_id);
            images += 1;
        }
        revisits += ms.revisits;
    }
    Ok(format!("{DOMINANCE_SEEDS} seeds, {images} images, {revisits} revisits"))
}

fn overlap_trace() -> Outcome {
    // 10x12: surface 1 on columns 0..2, surface 2 on 2..10; surface 2's only
    // prediction spills into column 1
    let (h, w) = (10, 12);
    let gt1 = rect(h, w, 0..h, 0..2);
    let gt2 = rect(h, w, 0..h, 2..10);
    let gt = JointMask::new(h, w, 2).unwrap().insert_classical(1, &gt1).unwrap().insert_classical(2, &gt2).unwrap();
    let scripts = [vec![rect(h, w, 0..5, 0..2), gt1.clone()], vec![rect(h, w, 0..h, 1..10)]];
    let mut script = OracleScript::new();
    for (i, masks) in scripts.iter().enumerate() {
        ok(script.insert("img", i as u16 + 1, masks.clone()), "script")?;
    }
    let plain: Vec<Vec<Vec<bool>>> = scripts.iter().map(|ms| ms.iter().map(|m| m.bits().to_vec()).collect()).collect();
    let reference = common::simulate(gt.labels(), &plain, 80.0, 70.0, 20);
    ensure!(reference.clicks == [3, 1] && reference.revisits == [1], "reference simulator drifted: {:?}", reference.clicks);

    let cfg = EvalConfig::new(80.0, 70.0, 20).unwrap();
    let result = ok(run_multi_surface(&mut ScriptedOracle::new(script), "img", &gt, &cfg), "run")?;
    ensure!(result.phase1[0].iou_trace == [50.0, 100.0], "phase 1 trace {:?}", result.phase1[0].iou_trace);
    ensure!(result.per_surface_clicks == reference.clicks, "clicks {:?}", result.per_surface_clicks);
    ensure!(result.revisit_order == reference.revisits, "revisits {:?}", result.revisit_order);
    ensure!(result.final_ious == reference.final_ious, "final IoUs {:?}", result.final_ious);
    Ok(format!("clicks {:?}, revisit order {:?}", result.per_surface_clicks, result.revisit_order))
}

// ---- network ----

fn nn_shapes() -> Outcome {
    let size = 448;
    let mut init = ParamInit::new(7);
    let cfg = FpnConfig::new(768, 16);
    ensure!(cfg.hidden_dims() == [384, 384, 768, 1536], "d_hidden {:?}", cfg.hidden_dims());
    let expected = [(112, 112, 64), (56, 56, 128), (28, 28, 320), (14, 14, 512)];
    let dims = [64, 128, 320, 512];
    let fpn = ok(ParallelFpn::new(&mut init, cfg.clone()), "fpn")?;
    let inverse = ok(InverseParallelFpn::new(&mut init, cfg), "inverse fpn")?;
    let fuser = ok(MmFuser::new(&mut init, dims, &[1], [1, 1, 1, 1], 4), "fuser")?;
    let embed = MsPatchEmbed::new(&mut init, dims);
    let csnet = ok(CsNet::new(&mut init, dims, [1, 1, 1, 1], 4, 256), "csnet")?;

    let g = size / 16;
    let features = BackboneFeatures {
        taps: (0..4).map(|_| Tensor3::new(g, g, 768, init.normal(g * g * 768, 1.0)).unwrap()).collect(),
        patch_size: 16,
        embed_dim: 768,
        image_height: size,
        image_width: size,
    };
    let f_img = ok(fpn.forward(&features), "fpn forward")?;
    ensure!(f_img.shapes() == expected, "pyramid {:?}", f_img.shapes());
    let back = ok(inverse.forward(&f_img), "inverse forward")?;
    ensure!(back.taps.iter().all(|t| t.shape() == (28, 28, 768)), "inverse shapes");
    let rates: Vec<usize> = fuser.branches[0].cross.iter().map(|b| b.attn.reduction).collect();
    ensure!(rates == [64, 16, 4, 1], "reduction rates {rates:?}");
    ensure!([4, 8, 16, 32].map(reduction_rate) == [64, 16, 4, 1], "reduction_rate table");

    let depth = Tensor3::new(size, size, 1, init.normal(size * size, 1.0)).unwrap();
    let f_mix = ok(fuser.forward(&f_img, &[depth]), "fuser forward")?;
    ensure!(f_mix.shapes() == expected, "fused {:?}", f_mix.shapes());
    let f_int = ok(embed.forward(&Tensor3::zeros(size, size, 3)), "patch embed")?;
    ensure!(f_int.shapes() == expected, "interaction {:?}", f_int.shapes());
    let probs = ok(csnet.forward(&f_mix, &f_int, size, size), "csnet forward")?;
    ensure!(probs.shape() == (size, size, 1), "output {:?}", probs.shape());
    ensure!(probs.data().iter().all(|&p| (0.0..=1.0).contains(&p)), "output outside [0,1]");
    Ok("448x448 / P=16 / d=768 shapes exact".into())
}

fn random_tensor(init: &mut ParamInit, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::new(h, w, c, init.normal(h * w * c, 1.0)).unwrap()
}

fn tiny_run(net_seed: u64, input_seed: u64) -> Result<(u64, Tensor3), String> {
    let net = ok(MmmsNet::with_stub_backbone(NetConfig::tiny(vec![1]), net_seed), "net")?;
    let mut init = ParamInit::new(input_seed);
    let rgb = Tensor3::new(64, 64, 3, init.normal(64 * 64 * 3, 0.25).into_iter().map(|v| v + 0.5).collect()).unwrap();
    let depth = random_tensor(&mut init, 64, 64, 1);
    let interaction =
        Tensor3::new(64, 64, 3, init.normal(64 * 64 * 3, 1.0).into_iter().map(|v| f32::from(v > 1.0)).collect()).unwrap();
    let prepared = ok(net.prepare("img", &rgb, &[depth]), "prepare")?;
    let out = ok(net.predict(&prepared, &interaction), "predict")?;
    Ok((prepared.f_mix.fingerprint(), out))
}

fn nn_residual_determinism() -> Outcome {
    let mut init = ParamInit::new(5);
    let mut block = ok(CrossBlock::new(&mut init, 16, 4, 4), "block")?;
    block.zero_branches();
    let (a, b) = (random_tensor(&mut init, 8, 8, 16), random_tensor(&mut init, 8, 8, 16));
    ensure!(ok(block.forward(&a, &b), "block")? == a.add(&b).unwrap(), "cross block residual");

    let dims = [8, 16, 24, 32];
    let mut fuser = ok(MmFuser::new(&mut init, dims, &[1], [1, 1, 1, 1], 4), "fuser")?;
    fuser.branches[0].cross.iter_mut().for_each(CrossBlock::zero_branches);
    let f_img = FeaturePyramid {
        levels: [
            random_tensor(&mut init, 16, 16, 8),
            random_tensor(&mut init, 8, 8, 16),
            random_tensor(&mut init, 4, 4, 24),
            random_tensor(&mut init, 2, 2, 32),
        ],
    };
    let depth = random_tensor(&mut init, 64, 64, 1);
    let f_mod = ok(fuser.branches[0].encode(&depth), "encode")?;
    ensure!(ok(fuser.forward(&f_img, &[depth]), "fuser")? == f_img.add(&f_mod).unwrap(), "fuser residual");

    let mut fpn = ok(ParallelFpn::new(&mut init, FpnConfig { d_fm: 16, patch_size: 8, embed_dims: dims }), "fpn")?;
    for s in &mut fpn.scales {
        s.last_conv_mut().ok_or("scale without a conv")?.zero();
    }
    let features = BackboneFeatures {
        taps: (0..4).map(|_| random_tensor(&mut init, 8, 8, 16)).collect(),
        patch_size: 8,
        embed_dim: 16,
        image_height: 64,
        image_width: 64,
    };
    let zeroed = ok(fpn.forward(&features), "fpn")?;
    ensure!(zeroed.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)), "zeroed projection not zero");

    for seed in [0, 1, 42] {
        let (fa, a) = tiny_run(seed, 9)?;
        let (fb, b) = tiny_run(seed, 9)?;
        ensure!(fa == fb, "seed {seed}: features differ");
        let bits = |t: &Tensor3| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(bits(&a) == bits(&b), "seed {seed}: output differs");
    }
    ensure!(tiny_run(0, 9)?.0 != tiny_run(1, 9)?.0, "different seeds gave identical features");

    for seed in 0..NAN_SWEEP_SEEDS {
        let (_, out) = tiny_run(seed, 1000 + seed)?;
        ensure!(out.is_finite(), "seed {seed}: non-finite output");
    }
    Ok(format!("residuals exact, deterministic, {NAN_SWEEP_SEEDS}-seed sweep finite"))
}

fn once_per_image() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = SynthConfig::new(23, 3, 2, OverlapMode::Adjacent);
    (cfg.height, cfg.width) = (48, 48);
    let ds = ok(write_synthetic(&cfg, dir.path()), "dataset")?;
    let counters: Mutex<Vec<Arc<CallCounters>>> = Mutex::new(Vec::new());
    let factory = || -> Result<Box<dyn Predictor>, PredictorError> {
        let net = MmmsNet::with_stub_backbone(NetConfig::tiny(vec![1]), 3)?;
        counters.lock().unwrap().push(net.counters());
        Ok(Box::new(NeuralPredictor::new(net, vec!["depth".into()], 3)?))
    };
    let opts = HarnessOptions::new(Protocol::Single, EvalConfig::single(100.0, 10).unwrap());
    let report = ok(evaluate_dataset(&ds, &factory, &opts), "eval")?;
    let counters = counters.into_inner().unwrap();
    ensure!(counters.len() == 1, "{} predictors built", counters.len());
    let c = counters[0].snapshot();
    let images = ds.ids().len();
    let clicks: usize = report.images.iter().flat_map(|i| &i.clicks).sum();
    ensure!(report.images.iter().flat_map(|i| &i.clicks).all(|&n| n == 10), "not a 10-click run");
    ensure!((c.backbone, c.parallel_fpn, c.mmfuser) == (images, images, images), "feature phase counts {c:?}");
    ensure!((c.patch_embed, c.csnet) == (clicks, clicks), "click phase counts {c:?}");
    let t = &report.timing;
    ensure!(t.clicks == clicks && t.feature_seconds > 0.0, "timing {t:?}");
    let isolated = t.click_seconds * 1000.0 / clicks as f64;
    ensure!((t.isolated_ms_per_click - isolated).abs() < 1e-9, "isolated latency includes more than clicks");
    ensure!(t.amortized_ms_per_click > t.isolated_ms_per_click, "amortized {t:?}");
    Ok(format!("{images} images x 10 clicks: feature phase {images}x, click phase {clicks}x"))
}

// ---- remote ----

fn remote_config(extra: &[&str], timeout: Duration, res: [usize; 2]) -> RemoteConfig {
    let mut args = vec!["echo-predictor".to_string()];
    args.extend(extra.iter().map(|s| s.to_string()));
    RemoteConfig { program: BIN.into(), args, timeout, resolution: res, modalities: vec!["depth".into()] }
}

fn remote_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = synthetic(dir.path(), 31, 2, OverlapMode::Adjacent, 32);
    let sample = ok(ds.load_sample(&ds.ids()[0]), "sample")?;
    let (h, w) = sample.dims();
    let mut p = ok(RemotePredictor::new(remote_config(&[], Duration::from_secs(10), [h, w])), "spawn")?;
    ok(p.prepare(&sample), "prepare")?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let request = |rng: &mut ChaCha8Rng| {
        let mut clicks = vec![Click::positive(rng.random_range(0..h), rng.random_range(0..w))];
        for _ in 0..rng.random_range(0..5) {
            let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
            clicks.push(if rng.random_bool(0.5) { Click::positive(r, c) } else { Click::negative(r, c) });
        }
        PredictRequest { image_id: sample.id.clone(), surface: rng.random_range(1..=3), clicks, prev_mask: random_mask(rng, h, w) }
    };
    for i in 0..REMOTE_REQUESTS {
        let req = request(&mut rng);
        let resp = ok(p.predict(&req), "predict")?;
        ensure!(resp.probabilities.binarize(0.5) == req.prev_mask, "request {i} not echoed");
    }

    let mut bad = ok(RemotePredictor::new(remote_config(&["--fault", "malformed"], Duration::from_secs(10), [h, w])), "spawn")?;
    ok(bad.prepare(&sample), "prepare")?;
    match bad.predict(&request(&mut rng)) {
        Err(PredictorError::Protocol { field, .. }) if field == "mask.counts" => {}
        other => return Err(format!("malformed payload gave {other:?}")),
    }

    let mut hung = ok(RemotePredictor::new(remote_config(&["--fault", "hang"], REMOTE_TIMEOUT, [h, w])), "spawn")?;
    ok(hung.prepare(&sample), "prepare")?;
    let start = Instant::now();
    match hung.predict(&request(&mut rng)) {
        Err(PredictorError::Timeout { after, .. }) if after == REMOTE_TIMEOUT => {}
        other => return Err(format!("hung child gave {other:?}")),
    }
    ensure!(start.elapsed() < REMOTE_TIMEOUT * 10, "timeout took {:?}", start.elapsed());

    // the harness reports both failures per image instead of crashing
    for fault in ["malformed", "hang"] {
        let factory = || -> Result<Box<dyn Predictor>, PredictorError> {
            Ok(Box::new(RemotePredictor::new(remote_config(&["--fault", fault], REMOTE_TIMEOUT, [h, w]))?))
        };
        let opts = HarnessOptions::new(Protocol::Single, EvalConfig::single(80.0, 5).unwrap());
        match evaluate_dataset(&ds, &factory, &opts) {
            Err(EvalError::AllImagesFailed(errors)) if errors.len() == ds.ids().len() => {}
            other => return Err(format!("harness with {fault} child gave {:?}", other.map(|r| r.errors))),
        }
    }
    Ok(format!("{REMOTE_REQUESTS} requests lossless; malformed -> mask.counts; hang -> timeout after {REMOTE_TIMEOUT:?}"))
}

// ---- end to end ----

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = dir.path().join("ds");
    let ds = ds.to_str().unwrap();
    let count = E2E_IMAGES.to_string();
    run_cli(&["gen-synth", "--seed", "2024", "--count", &count, "--surfaces", "3", "--overlap", "adjacent", "--out", ds])?;
    let mut reports = Vec::new();
    let mut elapsed = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("{run}/report.json"));
        let start = Instant::now();
        run_cli(&["eval-multi", "--dataset", ds, "--predictor", "classical", "--workers", "1", "--seed", "5", "--out", out.to_str().unwrap()])?;
        elapsed.push(start.elapsed());
        reports.push(out);
    }
    ensure!(elapsed[0] < E2E_BUDGET, "eval-multi took {:?}", elapsed[0]);

    let text = std::fs::read_to_string(&reports[0]).map_err(|e| e.to_string())?;
    let value: serde_json::Value = ok(serde_json::from_str(&text), "json")?;
    for key in ["schema_version", "protocol", "config", "metrics", "images", "fingerprints", "timing"] {
        ensure!(value.get(key).is_some(), "report lacks '{key}'");
    }
    let report = ok(EvalReport::from_json(&text), "schema")?;
    ensure!(report.metrics.images == E2E_IMAGES, "{} images", report.metrics.images);
    ensure!(report.errors.is_empty(), "errors {:?}", report.errors);
    let ms = report.metrics.multi.as_ref().ok_or("no multi-surface metrics")?;
    ensure!((0.0..=100.0).contains(&ms.frms), "FRMS {}", ms.frms);
    ensure!(report.metrics.noc.iter().all(|n| (1.0..=20.0).contains(&n.noc)), "NoC out of range");
    let csv = std::fs::read_to_string(reports[0].with_extension("csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    ensure!(lines.next() == Some("metric,value"), "CSV header");
    ensure!(lines.count() == report.metric_rows().len(), "CSV row count");

    let second = ok(EvalReport::read(&reports[1]), "second report")?;
    ensure!(report.to_json_without_timing() == second.to_json_without_timing(), "rerun differs");
    Ok(format!("{E2E_IMAGES} images in {:?}, NoC@80 {:.3}, NoCMS {:.3}, rerun identical", elapsed[0], report.metrics.noc[0].noc, ms.nocms))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("IoU vs brute force", iou_brute_force),
        ("joint insert/extract vs per-pixel oracle", joint_insert_extract),
        ("click simulator deepest point", deepest_point),
        ("scripted-oracle NoC", scripted_noc),
        ("non-overlap equivalence", disjoint_equivalence),
        ("dominance over 10 seeds", dominance),
        ("overlap revisit trace", overlap_trace),
        ("nn shape suite", nn_shapes),
        ("nn residuals, determinism, NaN sweep", nn_residual_determinism),
        ("once-per-image contract", once_per_image),
        ("remote protocol", remote_protocol),
        ("end-to-end desk benchmark", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{t:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{t:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
