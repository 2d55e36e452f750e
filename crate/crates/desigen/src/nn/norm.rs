//! GroupNorm over `(C, H, W)` samples and LayerNorm over `(N, D)` rows.

use super::{init, Module, Param, ParamSlot, Visitor};
use ndarray::{Array1, Array2, Array3, Axis, Ix1};

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub groups: usize,
    pub eps: f32,
}

#[derive(Clone, Debug)]
pub struct GnCache {
    pub xhat: Array3<f32>,
    pub inv_std: Array1<f32>, // per group
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "channels must divide into groups");
        GroupNorm {
            gamma: Param::new(init::ones1(channels)),
            beta: Param::new(init::zeros1(channels)),
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array3<f32>) -> (Array3<f32>, GnCache) {
        let (c, h, w) = x.dim();
        let cg = c / self.groups;
        let n = (cg * h * w) as f32;
        let mut xhat = Array3::zeros((c, h, w));
        let mut inv_std = Array1::zeros(self.groups);
        for g in 0..self.groups {
            let sl = x.slice(ndarray::s![g * cg..(g + 1) * cg, .., ..]);
            let mean = sl.sum() / n;
            let var = sl.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[g] = is;
            let mut dst = xhat.slice_mut(ndarray::s![g * cg..(g + 1) * cg, .., ..]);
            dst.assign(&sl);
            dst.mapv_inplace(|v| (v - mean) * is);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let ga = self.gamma.v[ci];
            let be = self.beta.v[ci];
            y.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v * ga + be);
        }
        (y, GnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &GnCache, dy: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = dy.dim();
        let cg = c / self.groups;
        let n = (cg * h * w) as f32;
        // param grads
        for ci in 0..c {
            let dyc = dy.index_axis(Axis(0), ci);
            let xh = cache.xhat.index_axis(Axis(0), ci);
            self.gamma.g[ci] += (&dyc * &xh).sum();
            self.beta.g[ci] += dyc.sum();
        }
        // input grad per group: dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        let mut dx = Array3::zeros((c, h, w));
        for g in 0..self.groups {
            let range = ndarray::s![g * cg..(g + 1) * cg, .., ..];
            let dyg = dy.slice(range);
            let xh = cache.xhat.slice(range);
            let mut dxhat = dyg.to_owned();
            for (ci_local, mut plane) in dxhat.axis_iter_mut(Axis(0)).enumerate() {
                plane.mapv_inplace(|v| v * self.gamma.v[g * cg + ci_local]);
            }
            let m1 = dxhat.sum() / n;
            let m2 = (&dxhat * &xh).sum() / n;
            let is = cache.inv_std[g];
            let mut dst = dx.slice_mut(range);
            ndarray::Zip::from(&mut dst).and(&dxhat).and(&xh).for_each(|d, &dh, &x| {
                *d = is * (dh - m1 - x * m2);
            });
        }
        dx
    }
}

impl Module for GroupNorm {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.visit(&format!("{prefix}.gamma"), &mut self.gamma as &mut dyn ParamSlot);
        v.visit(&format!("{prefix}.beta"), &mut self.beta as &mut dyn ParamSlot);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub eps: f32,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    pub xhat: Array2<f32>,
    pub inv_std: Array1<f32>, // per row
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(init::ones1(dim)),
            beta: Param::new(init::zeros1(dim)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, LnCache) {
        let (n, d) = x.dim();
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Array1::zeros(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.sum() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = is;
            let mut dst = xhat.row_mut(i);
            dst.assign(&row);
            dst.mapv_inplace(|v| (v - mean) * is);
        }
        let mut y = xhat.clone();
        y  = y * &self.gamma.v + &self.beta.v;
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LnCache, dy: &Array2<f32>) -> Array2<f32> {
        let (n, d) = dy.dim();
        self.gamma.g += &(dy * &cache.xhat).sum_axis(Axis(0));
        self.beta.g += &dy.sum_axis(Axis(0));
        let mut dx = Array2::zeros((n, d));
        for i in 0..n {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let dxhat: Vec<f32> = dyr
                .iter()
                .zip(self.gamma.v.iter())
                .map(|(dv, g)| dv * g)
                .collect();
            let m1: f32 = dxhat.iter().sum::<f32>() / d as f32;
            let m2: f32 = dxhat.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f32>() / d as f32;
            let is = cache.inv_std[i];
            for j in 0..d {
                dx[[i, j]] = is * (dxhat[j] - m1 - xh[j] * m2);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.visit(&format!("{prefix}.gamma"), &mut self.gamma as &mut dyn ParamSlot);
        v.visit(&format!("{prefix}.beta"), &mut self.beta as &mut dyn ParamSlot);
    }
}
