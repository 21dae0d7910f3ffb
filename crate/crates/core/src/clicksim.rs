//! Automatic click placement: the next click goes to the deepest pixel of the
//! largest misclassified region.

use crate::mask::{BinaryMask, Click, MaskError, Polarity};

/// One 4-connected region of set pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// Row-major flat indices, sorted ascending.
    pub pixels: Vec<usize>,
    /// First pixel in row-major order.
    pub top_left: (usize, usize),
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Error regions of a prediction against ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorAnalysis {
    pub false_negative_regions: Vec<Component>,
    pub false_positive_regions: Vec<Component>,
}

impl ErrorAnalysis {
    pub fn new(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self, MaskError> {
        let fn_mask = gt.and_not(pred)?;
        let fp_mask = pred.and_not(gt)?;
        Ok(Self {
            false_negative_regions: connected_components(&fn_mask),
            false_positive_regions: connected_components(&fp_mask),
        })
    }

    pub fn error_area(&self) -> usize {
        self.false_negative_regions.iter().chain(&self.false_positive_regions).map(Component::area).sum()
    }

    /// Largest region over both error kinds, ties to the smallest top-left.
    pub fn largest(&self) -> Option<(&Component, Polarity)> {
        let fns = self.false_negative_regions.iter().map(|c| (c, Polarity::Positive));
        let fps = self.false_positive_regions.iter().map(|c| (c, Polarity::Negative));
        fns.chain(fps).min_by(|(a, _), (b, _)| b.area().cmp(&a.area()).then(a.top_left.cmp(&b.top_left)))
    }
}

/// 4-connected components in order of their first row-major pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = mask.dims();
    let bits = mask.bits();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if bits[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        pixels.sort_unstable();
        out.push(Component { pixels, top_left: (start / w, start % w) });
    }
    out
}

const INF: i64 = i64::MAX / 4;

/// Lower envelope of parabolas: `d[p] = min_q f[q] + (p - q)^2`.
fn edt_1d(f: &[i64], d: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let first = match f.iter().position(|&x| x < INF) {
        Some(p) => p,
        None => {
            d.fill(INF);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if f[q] >= INF {
            continue;
        }
        let parabola = |p: usize| (f[q] + (q * q) as i64 - f[p] - (p * p) as i64) as f64 / (2.0 * (q as f64 - p as f64));
        let mut s = parabola(v[k]);
        // z[0] is -inf, so this stops at k == 0
        while s <= z[k] {
            k -= 1;
            s = parabola(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (p, out) in d.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let dq = p as i64 - q as i64;
        *out = f[q] + dq * dq;
    }
}

/// Squared Euclidean distance from every pixel to the nearest pixel outside
/// `mask`, with everything beyond the image border counting as outside.
/// Outside pixels map to 0.
pub fn squared_distance_to_complement(mask: &BinaryMask) -> Vec<i64> {
    let (h, w) = mask.dims();
    let (ph, pw) = (h + 2, w + 2);
    let mut grid = vec![0i64; ph * pw];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                grid[(r + 1) * pw + c + 1] = INF;
            }
        }
    }
    let n = ph.max(pw);
    let (mut f, mut d) = (vec![0i64; n], vec![0i64; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0f64; n + 1]);
    for c in 0..pw {
        for r in 0..ph {
            f[r] = grid[r * pw + c];
        }
        edt_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for r in 0..ph {
            grid[r * pw + c] = d[r];
        }
    }
    for r in 0..ph {
        f[..pw].copy_from_slice(&grid[r * pw..(r + 1) * pw]);
        edt_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        grid[r * pw..(r + 1) * pw].copy_from_slice(&d[..pw]);
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend_from_slice(&grid[(r + 1) * pw + 1..(r + 1) * pw + 1 + w]);
    }
    out
}

/// Euclidean distance map to the complement of `mask` (see
/// [`squared_distance_to_complement`]).
pub fn distance_to_complement(mask: &BinaryMask) -> Vec<f64> {
    squared_distance_to_complement(mask).into_iter().map(|d| (d as f64).sqrt()).collect()
}

/// Pixel of `component` farthest from its complement, ties to row-major first.
pub fn deepest_pixel(component: &Component, height: usize, width: usize) -> (usize, usize) {
    let mut bits = vec![false; height * width];
    for &i in &component.pixels {
        bits[i] = true;
    }
    let mask = BinaryMask::from_bits(height, width, bits).expect("component fits its image");
    let dist = squared_distance_to_complement(&mask);
    let mut best = component.pixels[0];
    for &i in &component.pixels {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    (best / width, best % width)
}

/// Next simulated click, or `None` when the prediction already equals ground truth.
pub fn next_click(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<Click>, MaskError> {
    let analysis = ErrorAnalysis::new(pred, gt)?;
    let Some((component, polarity)) = analysis.largest() else {
        return Ok(None);
    };
    let (row, col) = deepest_pixel(component, pred.height(), pred.width());
    Ok(Some(Click { row, col, polarity }))
}
