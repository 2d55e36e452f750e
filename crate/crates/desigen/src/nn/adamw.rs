//! AdamW with decoupled weight decay and bias correction.

use super::{Module, ParamSlot};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: usize,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(lr: f32, beta1: f32, beta2: f32, weight_decay: f32) -> Self {
        AdamW {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update from the gradients currently accumulated in the model.
    pub fn step<M: Module>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let mut idx = 0;
        let m_state = &mut self.m;
        let v_state = &mut self.v;
        model.visit_params("", &mut |_: &str, p: &mut dyn ParamSlot| {
            if idx == m_state.len() {
                m_state.push(vec![0.0; p.len()]);
                v_state.push(vec![0.0; p.len()]);
            }
            let m = &mut m_state[idx];
            let v = &mut v_state[idx];
            assert_eq!(m.len(), p.len(), "optimizer state out of sync");
            let grads: Vec<f32> = p.grad().iter().copied().collect();
            let mut vals = p.value_mut();
            for ((val, g), (mi, vi)) in vals
                .iter_mut()
                .zip(grads.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *val -= lr * (mhat / (vhat.sqrt() + eps) + wd * *val);
            }
            idx += 1;
        });
    }
}
