//! Minimal neural-network layer zoo with hand-written backward passes.
//!
//! Layers operate on single samples (no batch axis); batching happens in
//! [`batch::parallel_grads`], which fans samples out over worker clones of
//! the model and merges gradients in a fixed order, so training is
//! bit-deterministic regardless of thread count.
//!
//! Every layer's backward pass is verified against central finite
//! differences in the unit tests.

pub mod adamw;
pub mod attention;
pub mod batch;
pub mod ckpt;
pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;

pub use adamw::AdamW;
pub use attention::{causal_bias, key_padding_bias, softmax_backward_rows, softmax_rows, Attention, AttnCache};
pub use conv::{AvgPool2, Conv2d, Upsample2};
pub use linear::Linear;
pub use norm::{GroupNorm, LayerNorm};

use ndarray::{Array, ArrayViewD, ArrayViewMutD, Dimension};

/// A trainable tensor: value plus accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<D: Dimension> {
    pub v: Array<f32, D>,
    pub g: Array<f32, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(v: Array<f32, D>) -> Self {
        let g = Array::zeros(v.raw_dim());
        Param { v, g }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }
}

/// Type-erased access to a parameter for optimizers and checkpoints.
pub trait ParamSlot {
    fn value(&self) -> ArrayViewD<'_, f32>;
    fn value_mut(&mut self) -> ArrayViewMutD<'_, f32>;
    fn grad(&self) -> ArrayViewD<'_, f32>;
    fn grad_mut(&mut self) -> ArrayViewMutD<'_, f32>;
    fn len(&self) -> usize;
}

impl<D: Dimension> ParamSlot for Param<D> {
    fn value(&self) -> ArrayViewD<'_, f32> {
        self.v.view().into_dyn()
    }
    fn value_mut(&mut self) -> ArrayViewMutD<'_, f32> {
        self.v.view_mut().into_dyn()
    }
    fn grad(&self) -> ArrayViewD<'_, f32> {
        self.g.view().into_dyn()
    }
    fn grad_mut(&mut self) -> ArrayViewMutD<'_, f32> {
        self.g.view_mut().into_dyn()
    }
    fn len(&self) -> usize {
        self.v.len()
    }
}

pub trait Visitor {
    fn visit(&mut self, name: &str, p: &mut dyn ParamSlot);
}

impl<F: FnMut(&str, &mut dyn ParamSlot)> Visitor for F {
    fn visit(&mut self, name: &str, p: &mut dyn ParamSlot) {
        self(name, p)
    }
}

/// Anything holding trainable parameters. Traversal order is fixed by the
/// implementation and shared by optimizers, checkpoints and grad merging.
pub trait Module {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor);
}

pub fn zero_grads<M: Module>(m: &mut M) {
    m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
        p.grad_mut().fill(0.0);
    });
}

pub fn param_count<M: Module>(m: &mut M) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| n += p.len());
    n
}

/// Concatenated copy of all gradients, in traversal order.
pub fn flat_grads<M: Module>(m: &mut M) -> Vec<f32> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
        out.extend(p.grad().iter().copied());
    });
    out
}

/// Adds a flat gradient vector (as produced by [`flat_grads`]) into `m`.
pub fn add_flat_grads<M: Module>(m: &mut M, flat: &[f32]) {
    let mut off = 0;
    m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
        let n = p.len();
        for (dst, src) in p.grad_mut().iter_mut().zip(&flat[off..off + n]) {
            *dst += *src;
        }
        off += n;
    });
    assert_eq!(off, flat.len(), "gradient length mismatch");
}

pub fn scale_grads<M: Module>(m: &mut M, s: f32) {
    m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
        p.grad_mut().mapv_inplace(|g| g * s);
    });
}

/// Clips the global L2 gradient norm to `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<M: Module>(m: &mut M, max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
        sq += p.grad().iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>();
    });
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        scale_grads(m, s);
    }
    norm
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// d silu(x) / dx.
pub fn dsilu(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn gelu(x: f32) -> f32 {
    // tanh approximation
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn dgelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
pub mod grad_check {
    //! Finite-difference verification of backward passes.

    use super::*;

    fn get_flat<M: Module>(m: &mut M, idx: usize) -> f32 {
        let mut off = 0;
        let mut out = f32::NAN;
        m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
            let n = p.len();
            if idx >= off && idx < off + n {
                out = *p.value().iter().nth(idx - off).unwrap();
            }
            off += n;
        });
        out
    }

    fn set_flat<M: Module>(m: &mut M, idx: usize, val: f32) {
        let mut off = 0;
        m.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
            let n = p.len();
            if idx >= off && idx < off + n {
                *p.value_mut().iter_mut().nth(idx - off).unwrap() = val;
            }
            off += n;
        });
    }

    /// Checks analytic gradients against central differences on `n_probe`
    /// evenly spaced parameters. `loss` must zero grads, run forward +
    /// backward and return the scalar loss.
    pub fn check<M: Module>(
        m: &mut M,
        mut loss: impl FnMut(&mut M) -> f64,
        n_probe: usize,
        eps: f32,
        abs_tol: f64,
        rel_tol: f64,
    ) {
        zero_grads(m);
        let _ = loss(m);
        let grads = flat_grads(m);
        let total = grads.len();
        assert!(total > 0);
        let stride = (total / n_probe.max(1)).max(1);
        for i in (0..total).step_by(stride) {
            let orig = get_flat(m, i);
            set_flat(m, i, orig + eps);
            let lp = loss(m);
            set_flat(m, i, orig - eps);
            let lm = loss(m);
            set_flat(m, i, orig);
            let fd = (lp - lm) / (2.0 * eps as f64);
            let an = grads[i] as f64;
            let err = (fd - an).abs();
            let scale = fd.abs().max(an.abs()).max(1.0);
            assert!(
                err <= abs_tol + rel_tol * scale,
                "grad mismatch at flat index {i}: analytic {an:.6e} vs fd {fd:.6e} (err {err:.3e})"
            );
        }
    }
}
