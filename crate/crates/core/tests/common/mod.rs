//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

pub fn plain_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        100.0
    } else {
        inter as f64 / union as f64 * 100.0
    }
}

pub struct Simulated {
    pub clicks: Vec<usize>,
    pub failed: Vec<bool>,
    pub revisits: Vec<u16>,
    pub final_ious: Vec<f64>,
}

/// Straight-line re-implementation of the multi-surface protocol for an
/// oracle that ignores click positions, on plain label vectors.
pub fn simulate(gt: &[u16], scripts: &[Vec<Vec<bool>>], theta: f64, theta_avg: f64, n_max: usize) -> Simulated {
    let l = scripts.len();
    let gts: Vec<Vec<bool>> = (1..=l as u16).map(|k| gt.iter().map(|&v| v == k).collect()).collect();
    let mut labels = vec![0u16; gt.len()];
    let mut calls = vec![0usize; l];
    let mut failed = vec![false; l];
    // `last` starts as the surface's current extraction, which is what gets
    // re-inserted when the budget is already spent
    let run = |i: usize, calls: &mut Vec<usize>, mut last: Vec<bool>| -> (bool, Vec<bool>) {
        while calls[i] < n_max {
            calls[i] += 1;
            let script = &scripts[i];
            last = script[(calls[i] - 1).min(script.len() - 1)].clone();
            if plain_iou(&last, &gts[i]) >= theta {
                return (true, last);
            }
        }
        (false, last)
    };
    for (i, failed) in failed.iter_mut().enumerate() {
        let (ok, mask) = run(i, &mut calls, vec![false; gt.len()]);
        *failed = !ok;
        for (p, &m) in labels.iter_mut().zip(&mask) {
            if m {
                *p = i as u16 + 1;
            }
        }
    }
    let mut revisits = Vec::new();
    let ious = |labels: &[u16]| -> Vec<f64> {
        (0..l).map(|i| plain_iou(&labels.iter().map(|&v| v == i as u16 + 1).collect::<Vec<_>>(), &gts[i])).collect()
    };
    loop {
        let cur = ious(&labels);
        if cur.iter().sum::<f64>() / l as f64 >= theta_avg {
            break;
        }
        let mut pick: Option<usize> = None;
        for i in 0..l {
            if !failed[i] && cur[i] < theta && pick.is_none_or(|p| cur[i] < cur[p]) {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        revisits.push(i as u16 + 1);
        let k = i as u16 + 1;
        let (ok, mask) = run(i, &mut calls, labels.iter().map(|&v| v == k).collect());
        if !ok {
            failed[i] = true;
        }
        for (p, &m) in labels.iter_mut().zip(&mask) {
            if m {
                *p = k;
            } else if *p == k {
                *p = 0;
            }
        }
    }
    let final_ious = ious(&labels);
    let clicks = calls.iter().zip(&failed).map(|(&c, &f)| if f { n_max } else { c }).collect();
    Simulated { clicks, failed, revisits, final_ious }
}

