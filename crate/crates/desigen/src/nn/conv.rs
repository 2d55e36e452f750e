//! 2-D convolution (im2col + GEMM), average pooling and nearest upsampling
//! on single samples in `(C, H, W)` layout.

use super::{init, Module, Param, ParamSlot, Visitor};
use crate::rng::Rng;
use ndarray::{Array1, Array2, Array3, Ix1, Ix2};
use rand::Rng as _;

#[derive(Clone, Debug)]
pub struct Conv2d {
    /// `(cout, cin * k * k)`
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(rng: &mut Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let fan_in = cin * k * k;
        let bound = init::kaiming_bound(fan_in);
        let w = Param::new(init::uniform2(rng, cout, fan_in, bound));
        let b = Param::new(Array1::from_shape_fn(cout, |_| rng.gen_range(-bound..bound)));
        Conv2d { w, b, cin, cout, k, stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array3<f32>) -> Array2<f32> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.cin);
        let (ho, wo) = self.out_hw(h, w);
        let mut cols = Array2::zeros((self.cin * self.k * self.k, ho * wo));
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[[row, oy * wo + ox]] = x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f32>, h: usize, w: usize) -> Array3<f32> {
        let (ho, wo) = self.out_hw(h, w);
        let mut dx = Array3::zeros((self.cin, h, w));
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[[ci, iy as usize, ix as usize]] += dcols[[row, oy * wo + ox]];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (_, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let mut y = self.w.v.dot(&cols);
        for (mut row, b) in y.rows_mut().into_iter().zip(self.b.v.iter()) {
            row += *b;
        }
        y.into_shape_with_order((self.cout, ho, wo)).unwrap()
    }

    /// Accumulates dW/db and returns dX. Recomputes im2col from `x` instead
    /// of caching it; the GEMMs dominate anyway.
    pub fn backward(&mut self, x: &Array3<f32>, dy: &Array3<f32>) -> Array3<f32> {
        let (_, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let dy_mat = dy
            .view()
            .into_shape_with_order((self.cout, ho * wo))
            .unwrap();
        self.w.g += &dy_mat.dot(&cols.t());
        self.b.g += &dy_mat.sum_axis(ndarray::Axis(1));
        let dcols = self.w.v.t().dot(&dy_mat);
        self.col2im(&dcols, h, w)
    }
}

impl Module for Conv2d {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.visit(&format!("{prefix}.w"), &mut self.w as &mut dyn ParamSlot);
        v.visit(&format!("{prefix}.b"), &mut self.b as &mut dyn ParamSlot);
    }
}

/// 2x2 average pooling, stride 2. Input dims must be even.
pub fn avgpool2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let mut y = Array3::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                y[[ci, oy, ox]] = 0.25
                    * (x[[ci, 2 * oy, 2 * ox]]
                        + x[[ci, 2 * oy, 2 * ox + 1]]
                        + x[[ci, 2 * oy + 1, 2 * ox]]
                        + x[[ci, 2 * oy + 1, 2 * ox + 1]]);
            }
        }
    }
    y
}

pub fn avgpool2_backward(dy: &Array3<f32>) -> Array3<f32> {
    let (c, ho, wo) = dy.dim();
    let mut dx = Array3::zeros((c, ho * 2, wo * 2));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = 0.25 * dy[[ci, oy, ox]];
                dx[[ci, 2 * oy, 2 * ox]] = g;
                dx[[ci, 2 * oy, 2 * ox + 1]] = g;
                dx[[ci, 2 * oy + 1, 2 * ox]] = g;
                dx[[ci, 2 * oy + 1, 2 * ox + 1]] = g;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                let v = x[[ci, iy, ix]];
                y[[ci, 2 * iy, 2 * ix]] = v;
                y[[ci, 2 * iy, 2 * ix + 1]] = v;
                y[[ci, 2 * iy + 1, 2 * ix]] = v;
                y[[ci, 2 * iy + 1, 2 * ix + 1]] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Array3<f32>) -> Array3<f32> {
    let (c, h2, w2) = dy.dim();
    let mut dx = Array3::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for iy in 0..h2 / 2 {
            for ix in 0..w2 / 2 {
                dx[[ci, iy, ix]] = dy[[ci, 2 * iy, 2 * ix]]
                    + dy[[ci, 2 * iy, 2 * ix + 1]]
                    + dy[[ci, 2 * iy + 1, 2 * ix]]
                    + dy[[ci, 2 * iy + 1, 2 * ix + 1]];
            }
        }
    }
    dx
}

/// Marker structs so configs can talk about the ops; the functions above do
/// the work.
#[derive(Clone, Copy, Debug)]
pub struct AvgPool2;
#[derive(Clone, Copy, Debug)]
pub struct Upsample2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, zero_grads};
    use crate::rng::rng_from_seed;

    #[test]
    fn conv_identity_kernel() {
        let mut rng = rng_from_seed(0);
        let mut conv = Conv2d::new(&mut rng, 1, 1, 3, 1, 1);
        conv.w.v.fill(0.0);
        conv.w.v[[0, 4]] = 1.0; // center tap
        conv.b.v.fill(0.0);
        let x = Array3::from_shape_fn((1, 4, 5), |(_, y, x)| (y * 5 + x) as f32);
        let y = conv.forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_grads_match_finite_differences() {
        let mut rng = rng_from_seed(3);
        let mut conv = Conv2d::new(&mut rng, 2, 3, 3, 1, 1);
        let x = Array3::from_shape_fn((2, 5, 4), |_| rng.gen_range(-1.0..1.0f32));
        grad_check::check(
            &mut conv,
            |m| {
                zero_grads(m);
                let y = m.forward(&x);
                let dy = y.mapv(|v| 2.0 * v);
                let _ = m.backward(&x, &dy);
                y.iter().map(|v| (*v as f64) * (*v as f64)).sum()
            },
            16,
            1e-3,
            1e-3,
            1e-2,
        );
    }

    #[test]
    fn strided_conv_grads() {
        let mut rng = rng_from_seed(4);
        let mut conv = Conv2d::new(&mut rng, 2, 2, 3, 2, 1);
        let x = Array3::from_shape_fn((2, 6, 6), |_| rng.gen_range(-1.0..1.0f32));
        grad_check::check(
            &mut conv,
            |m| {
                zero_grads(m);
                let y = m.forward(&x);
                let dy = y.mapv(|v| 2.0 * v);
                let _ = m.backward(&x, &dy);
                y.iter().map(|v| (*v as f64) * (*v as f64)).sum()
            },
            12,
            1e-3,
            1e-3,
            1e-2,
        );
    }

    #[test]
    fn pool_and_upsample_adjoint() {
        // <pool(x), y> == <x, pool_backward(y)> up to the shared 1/4 factor
        let mut rng = rng_from_seed(5);
        let x = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0f32));
        let y = Array3::from_shape_fn((2, 2, 2), |_| rng.gen_range(-1.0..1.0f32));
        let lhs: f32 = (&avgpool2(&x) * &y).sum();
        let rhs: f32 = (&x * &avgpool2_backward(&y)).sum();
        assert!((lhs - rhs).abs() < 1e-5);

        let yu = Array3::from_shape_fn((2, 8, 8), |_| rng.gen_range(-1.0..1.0f32));
        let lhs: f32 = (&upsample2(&x) * &yu).sum();
        let rhs: f32 = (&x * &upsample2_backward(&yu)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
