//! Small encoder–decoder saliency detector trained with pixelwise BCE
//! against the corpus's analytic masks.

use crate::corpus::BannerRecord;
use crate::error::{DesigenError, Result};
use crate::nn::{self, batch, AdamW, Conv2d, Module, Visitor};
use crate::raster::{self, Gray, Rgb};
use crate::rng::derived_rng;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub res: usize,
    pub base: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { res: 64, base: 32 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig { epochs: 12, batch_size: 16, lr: 2e-3, seed: 0 }
    }
}

/// U-shaped segmentation net: two stride-2 stages down, skip-concat up,
/// sigmoid head. Output resolution equals input resolution.
#[derive(Clone, Debug)]
pub struct SaliencyDetector {
    pub cfg: DetectorConfig,
    c0: Conv2d,
    e1a: Conv2d,
    e1b: Conv2d,
    e2a: Conv2d,
    e2b: Conv2d,
    d1: Conv2d,
    d0: Conv2d,
    head: Conv2d,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl SaliencyDetector {
    pub fn new(rng: &mut crate::rng::Rng, cfg: DetectorConfig) -> Self {
        let b = cfg.base;
        SaliencyDetector {
            cfg,
            c0: Conv2d::new(rng, 3, b, 3, 1, 1),
            e1a: Conv2d::new(rng, b, 2 * b, 3, 2, 1),
            e1b: Conv2d::new(rng, 2 * b, 2 * b, 3, 1, 1),
            e2a: Conv2d::new(rng, 2 * b, 4 * b, 3, 2, 1),
            e2b: Conv2d::new(rng, 4 * b, 4 * b, 3, 1, 1),
            d1: Conv2d::new(rng, 4 * b + 2 * b, 2 * b, 3, 1, 1),
            d0: Conv2d::new(rng, 2 * b + b, b, 3, 1, 1),
            head: Conv2d::new(rng, b, 1, 1, 1, 0),
        }
    }

    /// Logit map at detector resolution for a pre-resized input in [0,1].
    fn forward_logits(&self, x: &Array3<f32>) -> (Array2<f32>, ForwardCache) {
        let xin = x.mapv(|v| v * 2.0 - 1.0);
        let a0 = self.c0.forward(&xin);
        let s0 = a0.mapv(nn::silu);
        let a1 = self.e1a.forward(&s0);
        let s1 = a1.mapv(nn::silu);
        let a1b = self.e1b.forward(&s1);
        let s1b = a1b.mapv(nn::silu);
        let a2 = self.e2a.forward(&s1b);
        let s2 = a2.mapv(nn::silu);
        let a2b = self.e2b.forward(&s2);
        let s2b = a2b.mapv(nn::silu);
        let up1 = nn::conv::upsample2(&s2b);
        let cat1 = ndarray::concatenate(Axis(0), &[up1.view(), s1b.view()]).unwrap();
        let a_d1 = self.d1.forward(&cat1);
        let s_d1 = a_d1.mapv(nn::silu);
        let up0 = nn::conv::upsample2(&s_d1);
        let cat0 = ndarray::concatenate(Axis(0), &[up0.view(), s0.view()]).unwrap();
        let a_d0 = self.d0.forward(&cat0);
        let s_d0 = a_d0.mapv(nn::silu);
        let logits3 = self.head.forward(&s_d0);
        let (_, h, w) = logits3.dim();
        let logits = logits3.index_axis(Axis(0), 0).to_owned();
        let cache = ForwardCache {
            xin,
            a0,
            s0,
            a1,
            s1,
            a1b,
            s1b,
            a2,
            s2,
            a2b,
            cat1,
            a_d1,
            cat0,
            a_d0,
            s_d0,
            hw: (h, w),
        };
        (logits, cache)
    }

    fn backward(&mut self, cache: &ForwardCache, dlogits: &Array2<f32>) {
        let (h, w) = cache.hw;
        let dl3 = dlogits.clone().insert_axis(Axis(0));
        let dl3 = dl3.into_dimensionality::<ndarray::Ix3>().unwrap();
        debug_assert_eq!(dl3.dim(), (1, h, w));
        let d_sd0 = self.head.backward(&cache.s_d0, &dl3);
        let d_ad0 = &d_sd0 * &cache.a_d0.mapv(nn::dsilu);
        let d_cat0 = self.d0.backward(&cache.cat0, &d_ad0);
        let b = self.cfg.base;
        let (d_up0, d_s0a) = split_channels(&d_cat0, 2 * b);
        let d_sd1 = nn::conv::upsample2_backward(&d_up0);
        let d_ad1 = &d_sd1 * &cache.a_d1.mapv(nn::dsilu);
        let d_cat1 = self.d1.backward(&cache.cat1, &d_ad1);
        let (d_up1, d_s1ba) = split_channels(&d_cat1, 4 * b);
        let d_s2b = nn::conv::upsample2_backward(&d_up1);
        let d_a2b = &d_s2b * &cache.a2b.mapv(nn::dsilu);
        let d_s2 = self.e2b.backward(&cache.s2, &d_a2b);
        let d_a2 = &d_s2 * &cache.a2.mapv(nn::dsilu);
        let mut d_s1b = self.e2a.backward(&cache.s1b, &d_a2);
        d_s1b += &d_s1ba;
        let d_a1b = &d_s1b * &cache.a1b.mapv(nn::dsilu);
        let d_s1 = self.e1b.backward(&cache.s1, &d_a1b);
        let d_a1 = &d_s1 * &cache.a1.mapv(nn::dsilu);
        let mut d_s0 = self.e1a.backward(&cache.s0, &d_a1);
        d_s0 += &d_s0a;
        let d_a0 = &d_s0 * &cache.a0.mapv(nn::dsilu);
        let _ = self.c0.backward(&cache.xin, &d_a0);
    }

    /// Saliency map in [0,1] with the same spatial size as the input image.
    /// Inputs whose resolution differs from the detector's are resized
    /// bilinearly on the way in, and the prediction is resized back out.
    pub fn detect(&self, image: &Rgb) -> Result<Gray> {
        if image.iter().any(|v| !v.is_finite()) {
            return Err(DesigenError::InvalidArgument("image contains non-finite values".into()));
        }
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let resized = raster::resize_rgb_bilinear(image, self.cfg.res, self.cfg.res);
        let (logits, _) = self.forward_logits(&resized);
        let probs = logits.mapv(sigmoid);
        if (h, w) == (self.cfg.res, self.cfg.res) {
            Ok(probs)
        } else {
            Ok(super::maps::resize_map(&probs, (h, w), super::maps::ResizeMode::Bilinear))
        }
    }
}

#[derive(Clone, Debug)]
struct ForwardCache {
    xin: Array3<f32>,
    a0: Array3<f32>,
    s0: Array3<f32>,
    a1: Array3<f32>,
    s1: Array3<f32>,
    a1b: Array3<f32>,
    s1b: Array3<f32>,
    a2: Array3<f32>,
    s2: Array3<f32>,
    a2b: Array3<f32>,
    cat1: Array3<f32>,
    a_d1: Array3<f32>,
    cat0: Array3<f32>,
    a_d0: Array3<f32>,
    s_d0: Array3<f32>,
    hw: (usize, usize),
}

fn split_channels(x: &Array3<f32>, first: usize) -> (Array3<f32>, Array3<f32>) {
    let a = x.slice(ndarray::s![..first, .., ..]).to_owned();
    let b = x.slice(ndarray::s![first.., .., ..]).to_owned();
    (a, b)
}

impl Module for SaliencyDetector {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.c0.visit_params(&format!("{prefix}.c0"), v);
        self.e1a.visit_params(&format!("{prefix}.e1a"), v);
        self.e1b.visit_params(&format!("{prefix}.e1b"), v);
        self.e2a.visit_params(&format!("{prefix}.e2a"), v);
        self.e2b.visit_params(&format!("{prefix}.e2b"), v);
        self.d1.visit_params(&format!("{prefix}.d1"), v);
        self.d0.visit_params(&format!("{prefix}.d0"), v);
        self.head.visit_params(&format!("{prefix}.head"), v);
    }
}

/// BCE forward + backward for one (image, target) pair; returns the loss.
fn bce_sample(model: &mut SaliencyDetector, image: &Rgb, target: &Gray) -> f64 {
    let (logits, cache) = model.forward_logits(image);
    let n = logits.len() as f64;
    let mut loss = 0.0f64;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for ((dl, z), t) in dlogits.iter_mut().zip(logits.iter()).zip(target.iter()) {
        let p = sigmoid(*z);
        let t = *t as f64;
        let pf = (p as f64).clamp(1e-7, 1.0 - 1e-7);
        loss += -(t * pf.ln() + (1.0 - t) * (1.0 - pf).ln());
        *dl = (p - t as f32) / n as f32;
    }
    model.backward(&cache, &dlogits);
    loss / n
}

/// Mean IoU at threshold 0.5; empty-vs-empty pairs count as IoU 1.
pub fn detector_iou(detector: &SaliencyDetector, records: &[&BannerRecord]) -> f64 {
    let mut total = 0.0;
    for rec in records {
        let pred = detector.detect(&rec.image).expect("finite corpus image");
        let mut inter = 0usize;
        let mut union = 0usize;
        for (p, t) in pred.iter().zip(rec.saliency.iter()) {
            let pb = *p >= 0.5;
            let tb = *t >= 0.5;
            if pb && tb {
                inter += 1;
            }
            if pb || tb {
                union += 1;
            }
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    total / records.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct TrainedDetector {
    pub detector: SaliencyDetector,
    pub val_iou: f64,
    pub final_loss: f64,
}

/// Trains on records whose resolution must equal the detector resolution;
/// deterministic in the train config seed.
pub fn train_detector(
    train: &[&BannerRecord],
    val: &[&BannerRecord],
    cfg: DetectorConfig,
    tc: &DetectorTrainConfig,
) -> Result<TrainedDetector> {
    if train.is_empty() {
        return Err(DesigenError::InvalidArgument("empty training set".into()));
    }
    let mut rng = derived_rng(tc.seed, "detector-init", 0);
    let mut model = SaliencyDetector::new(&mut rng, cfg);
    let mut opt = AdamW::new(tc.lr, 0.9, 0.999, 0.0);
    let mut step = 0usize;
    let mut final_loss = f64::INFINITY;
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom;
        let mut erng = derived_rng(tc.seed, "detector-shuffle", epoch as u64);
        order.shuffle(&mut erng);
        for chunk in order.chunks(tc.batch_size) {
            let items: Vec<&BannerRecord> = chunk.iter().map(|&i| train[i]).collect();
            let (grads, losses) = batch::parallel_grads(&model, &items, |m, rec| {
                bce_sample(m, &rec.image, &rec.saliency)
            });
            let loss = losses.iter().sum::<f64>() / losses.len() as f64;
            if !loss.is_finite() {
                return Err(DesigenError::Divergence { step, detail: format!("BCE loss {loss}") });
            }
            nn::zero_grads(&mut model);
            nn::add_flat_grads(&mut model, &grads);
            nn::scale_grads(&mut model, 1.0 / items.len() as f32);
            nn::clip_grad_norm(&mut model, 1.0);
            opt.step(&mut model);
            final_loss = loss;
            step += 1;
        }
    }
    let val_iou = if val.is_empty() { f64::NAN } else { detector_iou(&model, val) };
    Ok(TrainedDetector { detector: model, val_iou, final_loss })
}

#[derive(Serialize, Deserialize)]
struct DetectorHeader {
    version: u32,
    cfg: DetectorConfig,
    val_iou: f64,
}

pub fn save_detector(trained: &mut TrainedDetector, path: &Path) -> Result<()> {
    let header =
        DetectorHeader { version: 1, cfg: trained.detector.cfg, val_iou: trained.val_iou };
    nn::ckpt::save(&mut trained.detector, &header, path)
}

pub fn load_detector(path: &Path) -> Result<(SaliencyDetector, f64)> {
    let header: DetectorHeader = nn::ckpt::load_header(path)?;
    let mut rng = derived_rng(0, "detector-init", 0);
    let mut model = SaliencyDetector::new(&mut rng, header.cfg);
    nn::ckpt::load_into(&mut model, path)?;
    Ok((model, header.val_iou))
}
