//! Efficient attention: the full query set attends to a key/value set whose
//! spatial extent has been shrunk by a reduction rate `R`. With `R = 1` and the
//! same tensor on both sides this is plain multi-head self-attention.

use crate::init::ParamInit;
use crate::ops::{gelu_inplace, gemm_strided, softmax_rows, Conv2d, DepthwiseConv3, LayerNorm, Linear};
use crate::{NnError, Tensor3};

/// Key/value reduction rate for a pyramid level at `stride`: `(32 / stride)^2`.
pub fn reduction_rate(stride: usize) -> usize {
    let side = 32 / stride;
    side * side
}

fn integer_sqrt(r: usize) -> Option<usize> {
    let s = (r as f64).sqrt().round() as usize;
    (s * s == r).then_some(s)
}

/// Query rows processed per score block; bounds the score buffer.
const QUERY_BLOCK: usize = 1024;

#[derive(Clone, Debug)]
pub struct EffAttention {
    pub dim: usize,
    pub heads: usize,
    pub reduction: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// `sqrt(R) x sqrt(R)` patch merge (kernel = stride) followed by a norm.
    pub spatial_reduction: Option<(Conv2d, LayerNorm)>,
    pub proj: Linear,
}

impl EffAttention {
    pub fn new(init: &mut ParamInit, dim: usize, heads: usize, reduction: usize) -> Result<Self, NnError> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(NnError::Config(format!("{dim} channels cannot be split into {heads} heads")));
        }
        let side = integer_sqrt(reduction)
            .filter(|&s| s >= 1)
            .ok_or_else(|| NnError::Config(format!("reduction rate {reduction} is not a perfect square")))?;
        let query = Linear::new(init, dim, dim);
        let key = Linear::new(init, dim, dim);
        let value = Linear::new(init, dim, dim);
        let spatial_reduction =
            (side > 1).then(|| (Conv2d::new(init, dim, dim, side, side, 0), LayerNorm::new(dim)));
        let proj = Linear::new(init, dim, dim);
        Ok(Self { dim, heads, reduction, query, key, value, spatial_reduction, proj })
    }

    pub fn reduction_side(&self) -> usize {
        integer_sqrt(self.reduction).unwrap_or(1)
    }

    /// Number of keys/values produced for a `height x width` context.
    pub fn key_count(&self, height: usize, width: usize) -> Result<usize, NnError> {
        let side = self.reduction_side();
        if !height.is_multiple_of(side) || !width.is_multiple_of(side) {
            return Err(NnError::Indivisible {
                what: format!("key/value reduction R={}", self.reduction),
                size: (height, width),
                divisor: side,
            });
        }
        Ok((height / side) * (width / side))
    }

    /// Queries from `query_feat`, keys and values from `context`.
    pub fn forward(&self, query_feat: &Tensor3, context: &Tensor3) -> Result<Tensor3, NnError> {
        if query_feat.shape() != context.shape() {
            return Err(NnError::Shape(format!(
                "attention inputs differ: {:?} vs {:?}",
                query_feat.shape(),
                context.shape()
            )));
        }
        self.key_count(context.height(), context.width())?;
        let reduced;
        let kv_source = match &self.spatial_reduction {
            Some((merge, norm)) => {
                reduced = norm.forward(&merge.forward(context)?)?;
                &reduced
            }
            None => context,
        };
        let q = self.query.forward(query_feat)?;
        let k = self.key.forward(kv_source)?;
        let v = self.value.forward(kv_source)?;
        let attended = attend(&q, &k, &v, self.heads)?;
        self.proj.forward(&attended)
    }
}

/// Multi-head scaled dot-product attention; output has the query layout.
pub fn attend(q: &Tensor3, k: &Tensor3, v: &Tensor3, heads: usize) -> Result<Tensor3, NnError> {
    let dim = q.channels();
    if k.channels() != dim || v.channels() != dim || k.pixels() != v.pixels() || !dim.is_multiple_of(heads) {
        return Err(NnError::Shape("attention operands disagree".into()));
    }
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f32).sqrt();
    let nq = q.pixels();
    let nk = k.pixels();
    let mut out = vec![0.0f32; nq * dim];
    let mut scores = vec![0.0f32; QUERY_BLOCK.min(nq) * nk];
    for h in 0..heads {
        let off = h * head_dim;
        let mut start = 0;
        while start < nq {
            let rows = QUERY_BLOCK.min(nq - start);
            let block = &mut scores[..rows * nk];
            gemm_strided(
                rows,
                head_dim,
                nk,
                &q.data()[start * dim + off..],
                (dim, 1),
                &k.data()[off..],
                (1, dim),
                block,
                (nk, 1),
            );
            block.iter_mut().for_each(|s| *s *= scale);
            softmax_rows(block, nk);
            gemm_strided(
                rows,
                nk,
                head_dim,
                block,
                (nk, 1),
                &v.data()[off..],
                (dim, 1),
                &mut out[start * dim + off..],
                (dim, 1),
            );
            start += rows;
        }
    }
    Tensor3::new(q.height(), q.width(), dim, out)
}

/// Two-layer perceptron with GELU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut ParamInit, dim: usize, hidden: usize) -> Self {
        Self { fc1: Linear::new(init, dim, hidden), fc2: Linear::new(init, hidden, dim) }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let mut h = self.fc1.forward(x)?;
        gelu_inplace(&mut h);
        self.fc2.forward(&h)
    }
}

/// Perceptron with a 3x3 depthwise convolution between the two projections.
#[derive(Clone, Debug)]
pub struct MixFfn {
    pub fc1: Linear,
    pub dwconv: DepthwiseConv3,
    pub fc2: Linear,
}

impl MixFfn {
    pub fn new(init: &mut ParamInit, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(init, dim, hidden),
            dwconv: DepthwiseConv3::new(init, hidden),
            fc2: Linear::new(init, hidden, dim),
        }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let mut h = self.dwconv.forward(&self.fc1.forward(x)?)?;
        gelu_inplace(&mut h);
        self.fc2.forward(&h)
    }
}
