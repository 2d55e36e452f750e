//! Fully connected layer on row-major `(n, in)` inputs.

use super::{init, Module, Param, ParamSlot, Visitor};
use crate::rng::Rng;
use ndarray::{Array1, Array2, Ix1, Ix2};

#[derive(Clone, Debug)]
pub struct Linear {
    /// `(out, in)`
    pub w: Param<Ix2>,
    pub b: Option<Param<Ix1>>,
}

impl Linear {
    pub fn new(rng: &mut Rng, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let bound = init::kaiming_bound(in_dim);
        let w = Param::new(init::uniform2(rng, out_dim, in_dim, bound));
        let b = bias.then(|| Param::new(Array1::from_shape_fn(out_dim, |_| {
            use rand::Rng as _;
            rng.gen_range(-bound..bound)
        })));
        Linear { w, b }
    }

    pub fn in_dim(&self) -> usize {
        self.w.v.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.v.shape()[0]
    }

    /// `(n, in) -> (n, out)`
    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.w.v.t());
        if let Some(b) = &self.b {
            y += &b.v;
        }
        y
    }

    /// Accumulates dW/db and returns dX. `x` is the forward input.
    pub fn backward(&mut self, x: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
        self.w.g += &dy.t().dot(x);
        if let Some(b) = &mut self.b {
            b.g += &dy.sum_axis(ndarray::Axis(0));
        }
        dy.dot(&self.w.v)
    }
}

impl Module for Linear {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.visit(&format!("{prefix}.w"), &mut self.w as &mut dyn ParamSlot);
        if let Some(b) = &mut self.b {
            v.visit(&format!("{prefix}.b"), b as &mut dyn ParamSlot);
        }
    }
}
