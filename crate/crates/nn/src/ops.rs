//! Primitive layers. Weights are public so callers can load or zero them.

use crate::init::ParamInit;
use crate::{NnError, Tensor3};

/// `c = a * b (+ c if accumulate)`, all row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe dense row-major layouts.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided GEMM used by multi-head attention to address one head in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa);
    assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound the furthest element touched on each operand.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Per-pixel affine map `in_dim -> out_dim`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in_dim x out_dim`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(init: &mut ParamInit, in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: init.trunc_normal(in_dim * out_dim, 0.02),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zero(&mut self) {
        self.weight.iter_mut().for_each(|w| *w = 0.0);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        if x.channels() != self.in_dim {
            return Err(NnError::Shape(format!(
                "linear expects {} channels, got {}",
                self.in_dim,
                x.channels()
            )));
        }
        let rows = x.pixels();
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        gemm(rows, self.in_dim, self.out_dim, x.data(), &self.weight, &mut out, true);
        Tensor3::new(x.height(), x.width(), self.out_dim, out)
    }
}

/// 2-D convolution with square kernel, symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_dim: usize,
    pub out_dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(kernel * kernel * in_dim) x out_dim`, rows ordered `(ky, kx, c_in)`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

const IM2COL_BUDGET: usize = 1 << 22;

impl Conv2d {
    pub fn new(
        init: &mut ParamInit,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_out = kernel * kernel * out_dim;
        let std = (2.0 / fan_out as f32).sqrt();
        Self {
            in_dim,
            out_dim,
            kernel,
            stride,
            padding,
            weight: init.normal(kernel * kernel * in_dim * out_dim, std),
            bias: vec![0.0; out_dim],
        }
    }

    /// Kernel `k`, stride 1, "same" padding.
    pub fn same(init: &mut ParamInit, in_dim: usize, out_dim: usize, kernel: usize) -> Self {
        Self::new(init, in_dim, out_dim, kernel, 1, kernel / 2)
    }

    pub fn zero(&mut self) {
        self.weight.iter_mut().for_each(|w| *w = 0.0);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize), NnError> {
        let ph = height + 2 * self.padding;
        let pw = width + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return Err(NnError::Shape(format!(
                "conv kernel {} larger than padded input {ph}x{pw}",
                self.kernel
            )));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        if x.channels() != self.in_dim {
            return Err(NnError::Shape(format!(
                "conv expects {} channels, got {}",
                self.in_dim,
                x.channels()
            )));
        }
        let (oh, ow) = self.output_size(x.height(), x.width())?;
        let cols = self.kernel * self.kernel * self.in_dim;
        let positions = oh * ow;
        let mut out = Vec::with_capacity(positions * self.out_dim);
        for _ in 0..positions {
            out.extend_from_slice(&self.bias);
        }
        if self.kernel == 1 && self.stride == 1 && self.padding == 0 {
            gemm(positions, cols, self.out_dim, x.data(), &self.weight, &mut out, true);
            return Tensor3::new(oh, ow, self.out_dim, out);
        }

        let chunk = (IM2COL_BUDGET / cols).clamp(1, positions);
        let mut patches = vec![0.0f32; chunk * cols];
        let (h, w, c) = x.shape();
        let src = x.data();
        let mut start = 0;
        while start < positions {
            let rows = chunk.min(positions - start);
            for (i, row) in patches.chunks_mut(cols).take(rows).enumerate() {
                let pos = start + i;
                let (oy, ox) = (pos / ow, pos % ow);
                for ky in 0..self.kernel {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    for kx in 0..self.kernel {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        let dst = &mut row[(ky * self.kernel + kx) * c..(ky * self.kernel + kx + 1) * c];
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                        } else {
                            let s = (iy as usize * w + ix as usize) * c;
                            dst.copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
            gemm(
                rows,
                cols,
                self.out_dim,
                &patches[..rows * cols],
                &self.weight,
                &mut out[start * self.out_dim..(start + rows) * self.out_dim],
                true,
            );
            start += rows;
        }
        Tensor3::new(oh, ow, self.out_dim, out)
    }
}

/// 3x3 depthwise convolution, stride 1, padding 1.
#[derive(Clone, Debug)]
pub struct DepthwiseConv3 {
    pub channels: usize,
    /// `9 x channels`, rows ordered `(ky, kx)`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DepthwiseConv3 {
    pub fn new(init: &mut ParamInit, channels: usize) -> Self {
        // fan_out of a depthwise kernel is k*k*out/groups = 9
        let std = (2.0f32 / 9.0).sqrt();
        Self { channels, weight: init.normal(9 * channels, std), bias: vec![0.0; channels] }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let (h, w, c) = x.shape();
        if c != self.channels {
            return Err(NnError::Shape(format!("depthwise conv expects {} channels, got {c}", self.channels)));
        }
        let src = x.data();
        let mut out = Vec::with_capacity(src.len());
        for _ in 0..h * w {
            out.extend_from_slice(&self.bias);
        }
        for y in 0..h {
            for xx in 0..w {
                let dst = &mut out[(y * w + xx) * c..(y * w + xx + 1) * c];
                for ky in 0..3 {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = xx as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = (iy as usize * w + ix as usize) * c;
                        let k = &self.weight[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                        for ((d, v), kw) in dst.iter_mut().zip(&src[s..s + c]).zip(k) {
                            *d += v * kw;
                        }
                    }
                }
            }
        }
        Tensor3::new(h, w, c, out)
    }
}

/// Normalisation over the channel axis of each pixel independently.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { dim, gamma: vec![1.0; dim], beta: vec![0.0; dim], eps: 1e-6 }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        if x.channels() != self.dim {
            return Err(NnError::Shape(format!(
                "layer norm expects {} channels, got {}",
                self.dim,
                x.channels()
            )));
        }
        let mut out = x.clone();
        let n = self.dim as f32;
        for px in out.data_mut().chunks_mut(self.dim) {
            let mean = px.iter().sum::<f32>() / n;
            let var = px.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            for ((v, g), b) in px.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        Ok(out)
    }
}

/// Group normalisation with a single group: statistics over the whole map,
/// affine parameters per channel.
#[derive(Clone, Debug)]
pub struct GroupNorm1 {
    pub dim: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl GroupNorm1 {
    pub fn new(dim: usize) -> Self {
        Self { dim, gamma: vec![1.0; dim], beta: vec![0.0; dim], eps: 1e-5 }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        if x.channels() != self.dim {
            return Err(NnError::Shape(format!(
                "group norm expects {} channels, got {}",
                self.dim,
                x.channels()
            )));
        }
        let n = x.data().len() as f64;
        let mean = x.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = x.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let inv = (1.0 / (var + f64::from(self.eps)).sqrt()) as f32;
        let mean = mean as f32;
        let mut out = x.clone();
        for px in out.data_mut().chunks_mut(self.dim) {
            for ((v, g), b) in px.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

pub fn gelu_inplace(x: &mut Tensor3) {
    x.map_inplace(gelu);
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn interpolate_bilinear(x: &Tensor3, out_h: usize, out_w: usize) -> Result<Tensor3, NnError> {
    if out_h == 0 || out_w == 0 {
        return Err(NnError::Shape(format!("cannot resize to {out_h}x{out_w}")));
    }
    let (h, w, c) = x.shape();
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(inp - 1);
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = x.data();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let dst = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            let p00 = &src[(y0 * w + x0) * c..][..c];
            let p01 = &src[(y0 * w + x1) * c..][..c];
            let p10 = &src[(y1 * w + x0) * c..][..c];
            let p11 = &src[(y1 * w + x1) * c..][..c];
            for i in 0..c {
                let top = p00[i] + (p01[i] - p00[i]) * fx;
                let bottom = p10[i] + (p11[i] - p10[i]) * fx;
                dst[i] = top + (bottom - top) * fy;
            }
        }
    }
    Tensor3::new(out_h, out_w, c, out)
}

pub(crate) fn softmax_rows(scores: &mut [f32], cols: usize) {
    for row in scores.chunks_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}
