//! Multi-head attention with post-softmax probability capture, per-query row
//! scaling (attention reduction) and an injection point for auxiliary
//! gradients on the probabilities.

use super::{Linear, Module, Visitor};
use crate::rng::Rng;
use ndarray::{Array1, Array2};

/// Row-wise softmax in place. Entries at `-inf` (or any very large negative
/// bias) become exactly 0.
pub fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
}

/// Given post-softmax probs `p` and upstream grad `dp`, returns the grad on
/// the pre-softmax scores: `p * (dp - rowsum(dp * p))`.
pub fn softmax_backward_rows(p: &Array2<f32>, dp: &Array2<f32>) -> Array2<f32> {
    let mut ds = Array2::zeros(p.raw_dim());
    for ((mut ds_row, p_row), dp_row) in ds
        .rows_mut()
        .into_iter()
        .zip(p.rows())
        .zip(dp.rows())
    {
        let dot: f32 = p_row.iter().zip(dp_row.iter()).map(|(a, b)| a * b).sum();
        for ((d, &pv), &dpv) in ds_row.iter_mut().zip(p_row.iter()).zip(dp_row.iter()) {
            *d = pv * (dpv - dot);
        }
    }
    ds
}

/// Additive attention biases (0 = attend, large negative = blocked).
pub fn causal_bias(n: usize) -> Array2<f32> {
    Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 0.0 } else { -1e30 })
}

pub fn key_padding_bias(nq: usize, key_keep: &[bool]) -> Array2<f32> {
    Array2::from_shape_fn((nq, key_keep.len()), |(_, j)| if key_keep[j] { 0.0 } else { -1e30 })
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dk: usize,
}

#[derive(Clone, Debug)]
pub struct AttnCache {
    pub xq: Array2<f32>,
    pub xkv: Array2<f32>,
    pub q: Array2<f32>,
    pub k: Array2<f32>,
    pub v: Array2<f32>,
    /// Post-softmax probabilities per head, before any reduction.
    pub probs: Vec<Array2<f32>>,
    /// Row scale actually applied (reduction), if any.
    pub row_scale: Option<Array1<f32>>,
    /// Concatenated per-head attention outputs, input to `wo`.
    pub att: Array2<f32>,
}

impl Attention {
    /// `d_model` must divide by `heads`; `d_ctx` is the key/value input width.
    pub fn new(rng: &mut Rng, d_model: usize, d_ctx: usize, heads: usize) -> Self {
        assert!(d_model % heads == 0);
        Attention {
            wq: Linear::new(rng, d_model, d_model, false),
            wk: Linear::new(rng, d_ctx, d_model, false),
            wv: Linear::new(rng, d_ctx, d_model, false),
            wo: Linear::new(rng, d_model, d_model, true),
            heads,
            dk: d_model / heads,
        }
    }

    /// `xq`: `(nq, d_model)`, `xkv`: `(nk, d_ctx)`. `bias` is added to the
    /// scores before softmax. `row_scale`, when given, multiplies every
    /// post-softmax row `p` by `row_scale[p]` (attention reduction); captured
    /// probabilities are taken before the scaling.
    pub fn forward(
        &self,
        xq: &Array2<f32>,
        xkv: &Array2<f32>,
        bias: Option<&Array2<f32>>,
        row_scale: Option<&Array1<f32>>,
    ) -> (Array2<f32>, AttnCache) {
        let nq = xq.nrows();
        let q = self.wq.forward(xq);
        let k = self.wk.forward(xkv);
        let v = self.wv.forward(xkv);
        let scale = 1.0 / (self.dk as f32).sqrt();
        let mut att = Array2::zeros((nq, self.heads * self.dk));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * self.dk..(h + 1) * self.dk;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k.slice(ndarray::s![.., cols.clone()]);
            let vh = v.slice(ndarray::s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s * scale);
            if let Some(b) = bias {
                scores += b;
            }
            softmax_rows(&mut scores);
            let p = scores;
            let used = match row_scale {
                Some(rs) => {
                    let mut scaled = p.clone();
                    for (mut row, &s) in scaled.rows_mut().into_iter().zip(rs.iter()) {
                        row.mapv_inplace(|v| v * s);
                    }
                    scaled
                }
                None => p.clone(),
            };
            let oh = used.dot(&vh);
            att.slice_mut(ndarray::s![.., cols]).assign(&oh);
            probs.push(p);
        }
        let y = self.wo.forward(&att);
        let cache = AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            row_scale: row_scale.cloned(),
            att,
        };
        (y, cache)
    }

    /// Backward. `dprobs_extra`, when given, holds per-head gradients on the
    /// captured (pre-reduction) probabilities from auxiliary losses. Returns
    /// `(dxq, dxkv)`. Reduction is inference-only, so backward rejects caches
    /// that had a row scale applied.
    pub fn backward(
        &mut self,
        cache: &AttnCache,
        dy: &Array2<f32>,
        dprobs_extra: Option<&[Array2<f32>]>,
    ) -> (Array2<f32>, Array2<f32>) {
        assert!(
            cache.row_scale.is_none(),
            "backward through reduced attention is not supported"
        );
        let datt = self.wo.backward(&cache.att, dy);
        let scale = 1.0 / (self.dk as f32).sqrt();
        let nq = cache.q.nrows();
        let nk = cache.k.nrows();
        let mut dq = Array2::zeros((nq, self.heads * self.dk));
        let mut dk = Array2::zeros((nk, self.heads * self.dk));
        let mut dv = Array2::zeros((nk, self.heads * self.dk));
        for h in 0..self.heads {
            let cols = h * self.dk..(h + 1) * self.dk;
            let p = &cache.probs[h];
            let doh = datt.slice(ndarray::s![.., cols.clone()]);
            let vh = cache.v.slice(ndarray::s![.., cols.clone()]);
            let kh = cache.k.slice(ndarray::s![.., cols.clone()]);
            let qh = cache.q.slice(ndarray::s![.., cols.clone()]);
            let mut dp = doh.dot(&vh.t());
            if let Some(extra) = dprobs_extra {
                dp += &extra[h];
            }
            dv.slice_mut(ndarray::s![.., cols.clone()])
                .assign(&p.t().dot(&doh));
            let mut ds = softmax_backward_rows(p, &dp);
            ds.mapv_inplace(|s| s * scale);
            dq.slice_mut(ndarray::s![.., cols.clone()])
                .assign(&ds.dot(&kh));
            dk.slice_mut(ndarray::s![.., cols])
                .assign(&ds.t().dot(&qh));
        }
        let dxq = self.wq.backward(&cache.xq, &dq);
        let mut dxkv = self.wk.backward(&cache.xkv, &dk);
        dxkv += &self.wv.backward(&cache.xkv, &dv);
        (dxq, dxkv)
    }
}

impl Module for Attention {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.wq.visit_params(&format!("{prefix}.wq"), v);
        self.wk.visit_params(&format!("{prefix}.wk"), v);
        self.wv.visit_params(&format!("{prefix}.wv"), v);
        self.wo.visit_params(&format!("{prefix}.wo"), v);
    }
}
