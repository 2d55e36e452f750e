//! FD-lite: Fréchet distance between Gaussian fits of image embeddings from
//! a small in-repo convolutional autoencoder.

use crate::error::{DesigenError, Result};
use crate::nn::{self, batch, AdamW, Conv2d, Linear, Module, Visitor};
use crate::raster::Rgb;
use crate::rng::{derived_rng, Rng};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FxConfig {
    pub res: usize,
    pub dim: usize,
    pub base: usize,
}

impl Default for FxConfig {
    fn default() -> Self {
        FxConfig { res: 64, dim: 64, base: 16 }
    }
}

impl FxConfig {
    fn stages(&self) -> usize {
        assert!(self.res >= 8 && self.res.is_power_of_two());
        (self.res / 4).trailing_zeros() as usize
    }
}

/// Convolutional autoencoder; `embed` uses the encoder half only.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub cfg: FxConfig,
    enc: Vec<Conv2d>,
    fc: Linear,
    dec_fc: Linear,
    dec: Vec<Conv2d>,
}

impl FeatureExtractor {
    pub fn new(rng: &mut Rng, cfg: FxConfig) -> Self {
        let stages = cfg.stages();
        let mut enc = Vec::new();
        let mut cin = 3;
        let mut ch = cfg.base;
        for _ in 0..stages {
            enc.push(Conv2d::new(rng, cin, ch, 3, 2, 1));
            cin = ch;
            ch *= 2;
        }
        let c_last = cin;
        let flat = c_last * 16;
        let fc = Linear::new(rng, flat, cfg.dim, true);
        let dec_fc = Linear::new(rng, cfg.dim, flat, true);
        let mut dec = Vec::new();
        let mut c = c_last;
        for i in 0..stages {
            let cout = if i + 1 == stages { 3 } else { c / 2 };
            dec.push(Conv2d::new(rng, c, cout, 3, 1, 1));
            c = cout.max(1);
        }
        FeatureExtractor { cfg, enc, fc, dec_fc, dec }
    }

    /// Deterministic embedding of an image (resized if needed).
    pub fn embed(&self, img: &Rgb) -> Array1<f32> {
        let img = crate::raster::resize_rgb_bilinear(img, self.cfg.res, self.cfg.res);
        let mut x = img.mapv(|v| v * 2.0 - 1.0);
        for conv in &self.enc {
            x = conv.forward(&x).mapv(nn::silu);
        }
        let c = x.dim().0;
        let flat = x.into_shape_with_order(c * 16).unwrap();
        let row = flat.insert_axis(ndarray::Axis(0));
        let z = self.fc.forward(&row.into_dimensionality().unwrap());
        z.row(0).to_owned()
    }

    /// One training sample: forward, MSE vs input in [-1,1], backward.
    fn train_sample(&mut self, img: &Rgb) -> f64 {
        let target = img.mapv(|v| v * 2.0 - 1.0);
        // encoder forward with caches
        let mut pre: Vec<Array3<f32>> = Vec::new(); // conv inputs
        let mut post: Vec<Array3<f32>> = Vec::new(); // conv outputs pre-activation
        let mut x = target.clone();
        for conv in &self.enc {
            pre.push(x.clone());
            let y = conv.forward(&x);
            post.push(y.clone());
            x = y.mapv(nn::silu);
        }
        let c_last = x.dim().0;
        let flat = x.into_shape_with_order(c_last * 16).unwrap();
        let enc_flat = flat.insert_axis(ndarray::Axis(0)).into_dimensionality::<ndarray::Ix2>().unwrap();
        let z = self.fc.forward(&enc_flat);
        // decoder forward with caches
        let dec_in = self.dec_fc.forward(&z);
        let mut dx = dec_in.row(0).to_owned().into_shape_with_order((c_last, 4, 4)).unwrap();
        let mut dpre: Vec<Array3<f32>> = Vec::new();
        let mut dpost: Vec<Array3<f32>> = Vec::new();
        for (i, conv) in self.dec.iter().enumerate() {
            dx = nn::conv::upsample2(&dx);
            dpre.push(dx.clone());
            let y = conv.forward(&dx);
            dpost.push(y.clone());
            dx = if i + 1 != self.dec.len() { y.mapv(nn::silu) } else { y };
        }
        let recon = dx;
        let n = recon.len() as f32;
        let diff = &recon - &target;
        let loss = diff.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>() / n as f64;
        // backward
        let mut grad = diff.mapv(|v| 2.0 * v / n);
        for i in (0..self.dec.len()).rev() {
            if i + 1 != self.dec.len() {
                grad = &grad * &dpost[i].mapv(nn::dsilu);
            }
            let gin = self.dec[i].backward(&dpre[i], &grad);
            grad = nn::conv::upsample2_backward(&gin);
        }
        let gflat = grad.into_shape_with_order(c_last * 16).unwrap();
        let grow = gflat.insert_axis(ndarray::Axis(0)).into_dimensionality::<ndarray::Ix2>().unwrap();
        let dz = self.dec_fc.backward(&z, &grow);
        let denc = self.fc.backward(&enc_flat, &dz);
        let mut grad = denc
            .row(0)
            .to_owned()
            .into_shape_with_order((c_last, 4, 4))
            .unwrap();
        for i in (0..self.enc.len()).rev() {
            grad = &grad * &post[i].mapv(nn::dsilu);
            grad = self.enc[i].backward(&pre[i], &grad);
        }
        loss
    }
}

impl Module for FeatureExtractor {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, c) in self.enc.iter_mut().enumerate() {
            c.visit_params(&format!("{prefix}.enc{i}"), v);
        }
        self.fc.visit_params(&format!("{prefix}.fc"), v);
        self.dec_fc.visit_params(&format!("{prefix}.dec_fc"), v);
        for (i, c) in self.dec.iter_mut().enumerate() {
            c.visit_params(&format!("{prefix}.dec{i}"), v);
        }
    }
}

/// Trains the autoencoder on image crops; deterministic given the seed.
pub fn train_feature_extractor(
    images: &[Rgb],
    cfg: FxConfig,
    epochs: usize,
    batch_size: usize,
    lr: f32,
    seed: u64,
) -> Result<FeatureExtractor> {
    if images.is_empty() {
        return Err(DesigenError::InvalidArgument("no images to train on".into()));
    }
    let mut rng = derived_rng(seed, "fx-init", 0);
    let mut model = FeatureExtractor::new(&mut rng, cfg);
    let mut opt = AdamW::new(lr, 0.9, 0.999, 0.0);
    let resized: Vec<Rgb> = images
        .iter()
        .map(|im| crate::raster::resize_rgb_bilinear(im, cfg.res, cfg.res))
        .collect();
    let n = resized.len();
    let mut step = 0usize;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        let mut erng = derived_rng(seed, "fx-shuffle", epoch as u64);
        order.shuffle(&mut erng);
        for chunk in order.chunks(batch_size) {
            let items: Vec<&Rgb> = chunk.iter().map(|&i| &resized[i]).collect();
            let (grads, losses) =
                batch::parallel_grads(&model, &items, |m, img| m.train_sample(img));
            let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
            if !mean_loss.is_finite() {
                return Err(DesigenError::Divergence {
                    step,
                    detail: format!("feature extractor loss {mean_loss}"),
                });
            }
            nn::zero_grads(&mut model);
            nn::add_flat_grads(&mut model, &grads);
            nn::scale_grads(&mut model, 1.0 / items.len() as f32);
            nn::clip_grad_norm(&mut model, 1.0);
            opt.step(&mut model);
            step += 1;
        }
    }
    Ok(model)
}

fn gaussian_fit(x: &Array2<f64>) -> (nalgebra::DVector<f64>, nalgebra::DMatrix<f64>) {
    let (n, d) = x.dim();
    let mut mu = nalgebra::DVector::zeros(d);
    for j in 0..d {
        mu[j] = x.column(j).sum() / n as f64;
    }
    let mut cov = nalgebra::DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = x[[i, a]] - mu[a];
            for b in a..d {
                let v = da * (x[[i, b]] - mu[b]);
                cov[(a, b)] += v;
            }
        }
    }
    cov /= (n - 1) as f64;
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
        cov[(a, a)] += 1e-6; // jitter for the matrix square roots
    }
    (mu, cov)
}

fn sym_sqrt(m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two embedding sets, rows are
/// samples. Uses the symmetric square-root route
/// `tr sqrt(S_a^{1/2} S_b S_a^{1/2})`.
pub fn fd_lite(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(DesigenError::InvalidArgument(
            "fd_lite needs at least 2 samples per side".into(),
        ));
    }
    if a.ncols() != b.ncols() {
        return Err(DesigenError::InvalidArgument("embedding dims differ".into()));
    }
    let (mu_a, cov_a) = gaussian_fit(a);
    let (mu_b, cov_b) = gaussian_fit(b);
    let a_half = sym_sqrt(&cov_a);
    let inner = &a_half * &cov_b * &a_half;
    let eig = nalgebra::SymmetricEigen::new(0.5 * (&inner + inner.transpose()));
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dmu = &mu_a - &mu_b;
    Ok(dmu.dot(&dmu) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt)
}

/// Squared Euclidean distance in embedding space (single images).
pub fn embedding_distance(a: &Array1<f32>, b: &Array1<f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| ((x - y) as f64) * ((x - y) as f64))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_embeddings(seed: u64, n: usize, d: usize) -> Array2<f64> {
        let mut rng = derived_rng(seed, "test-emb", 0);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = random_embeddings(0, 40, 8);
        let d = fd_lite(&a, &a).unwrap();
        assert!(d.abs() < 1e-6, "expected ~0, got {d}");
    }

    #[test]
    fn translated_set_distance_is_squared_norm() {
        let a = random_embeddings(1, 60, 6);
        let mut b = a.clone();
        let shift = [0.5, -0.25, 0.0, 1.0, 0.1, -0.4];
        for mut row in b.rows_mut() {
            for (v, s) in row.iter_mut().zip(shift.iter()) {
                *v += s;
            }
        }
        let expect: f64 = shift.iter().map(|s| s * s).sum();
        let d = fd_lite(&a, &b).unwrap();
        assert!((d - expect).abs() < 1e-6, "{d} vs {expect}");
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = random_embeddings(2, 30, 5);
        let b = random_embeddings(3, 25, 5);
        let dab = fd_lite(&a, &b).unwrap();
        let dba = fd_lite(&b, &a).unwrap();
        assert!((dab - dba).abs() < 1e-6);
        assert!(dab > -1e-6);
    }

    #[test]
    fn too_few_samples_rejected() {
        let a = random_embeddings(4, 1, 4);
        let b = random_embeddings(5, 10, 4);
        assert!(fd_lite(&a, &b).is_err());
    }

    #[test]
    fn extractor_embeds_deterministically() {
        let mut rng = derived_rng(0, "fx-test", 0);
        let fx = FeatureExtractor::new(&mut rng, FxConfig { res: 16, dim: 8, base: 4 });
        let img: Rgb = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0f32));
        let a = fx.embed(&img);
        let b = fx.embed(&img);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn extractor_training_reduces_loss() {
        let mut rng = derived_rng(1, "fx-data", 0);
        let images: Vec<Rgb> = (0..12)
            .map(|_| {
                let base: f32 = rng.gen_range(0.0..1.0);
                Array3::from_shape_fn((3, 16, 16), |(c, y, _)| {
                    (base + 0.3 * c as f32 * y as f32 / 16.0).min(1.0)
                })
            })
            .collect();
        let cfg = FxConfig { res: 16, dim: 8, base: 4 };
        let fx = train_feature_extractor(&images, cfg, 3, 4, 3e-3, 7).unwrap();
        // a trained extractor should reconstruct better than a fresh one
        let mut fresh_rng = derived_rng(99, "fx-fresh", 0);
        let mut fresh = FeatureExtractor::new(&mut fresh_rng, cfg);
        let mut trained = fx.clone();
        let l_trained: f64 =
            images.iter().map(|im| trained.train_sample(im)).sum::<f64>() / images.len() as f64;
        let l_fresh: f64 =
            images.iter().map(|im| fresh.train_sample(im)).sum::<f64>() / images.len() as f64;
        assert!(l_trained < l_fresh, "trained {l_trained} vs fresh {l_fresh}");
    }
}
