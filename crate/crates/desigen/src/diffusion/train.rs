//! Diffusion training: denoising MSE plus the gamma-weighted salient
//! attention constraint, single optimizer step per batch.
//!
//! All stochastic draws (batch indices, timesteps, noise, conditioning
//! dropout) derive from (seed, step, sample) and never from the constraint
//! weight, so runs with different `gamma` see identical data streams.

use super::attention_ops::{constraint_prob_grads, saliency_attention_loss, AttentionStack};
use super::schedule::{make_noise_schedule, q_sample, NoiseSchedule, ScheduleKind};
use super::text::Tokenizer;
use super::unet::{DiffusionModel, UNetConfig};
use crate::corpus::BannerRecord;
use crate::error::{DesigenError, Result};
use crate::nn::{self, batch, AdamW};
use crate::raster::Gray;
use crate::rng::derived_rng;
use ndarray::Array3;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Which mask multiplies the captured attention in the constraint loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMask {
    /// The detected/analytic saliency map (the formula as written).
    Saliency,
    /// One minus the saliency map (the prose polarity).
    Complement,
    /// All ones (the full-mask ablation).
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub warmup_steps: usize,
    pub weight_decay: f32,
    pub grad_clip: f32,
    pub gamma: f32,
    pub constraint_mask: ConstraintMask,
    pub schedule_kind: ScheduleKind,
    pub schedule_t: usize,
    pub cond_dropout: f32,
    pub seed: u64,
    pub quiet: bool,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            steps: 2000,
            batch_size: 32,
            lr: 1e-4,
            warmup_steps: 50,
            weight_decay: 0.0,
            grad_clip: 1.0,
            gamma: 0.5,
            constraint_mask: ConstraintMask::Saliency,
            schedule_kind: ScheduleKind::Linear,
            schedule_t: 1000,
            cond_dropout: 0.1,
            seed: 0,
            quiet: false,
        }
    }
}

/// Per-step bookkeeping; `l_total = l_d + gamma * l_c` by construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainStats {
    pub step: usize,
    pub l_d: f64,
    pub l_c: f64,
    pub l_total: f64,
    pub lr: f32,
}

struct TrainItem {
    x0: Array3<f32>,
    tokens: Vec<usize>,
    mask: Gray,
    t: usize,
    noise: Array3<f32>,
}

fn constraint_target(record: &BannerRecord, kind: ConstraintMask) -> Gray {
    match kind {
        ConstraintMask::Saliency => record.saliency.clone(),
        ConstraintMask::Complement => record.saliency.mapv(|v| 1.0 - v),
        ConstraintMask::Full => Gray::ones(record.saliency.dim()),
    }
}

/// One optimizer step over a prepared batch. Returns (l_d, l_c) means.
fn run_step(
    model: &mut DiffusionModel,
    opt: &mut AdamW,
    items: &[TrainItem],
    schedule: &NoiseSchedule,
    gamma: f32,
    grad_clip: f32,
) -> Result<(f64, f64)> {
    let (grads, losses) = batch::parallel_grads(model, items, |m, item| {
        let x_t = q_sample(&item.x0, item.t, &item.noise, schedule).expect("valid q_sample inputs");
        let (ctx, tcache) = m.text.forward(&item.tokens);
        let (eps, caches, capture) = m.forward_unet(&x_t, item.t, &ctx, None);
        let n = eps.len() as f64;
        let l_d = eps
            .iter()
            .zip(item.noise.iter())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / n;
        let d_eps = (&eps - &item.noise).mapv(|v| 2.0 * v / n as f32);
        let content = Tokenizer::content_mask(&item.tokens);
        let stack = AttentionStack::single_step(content.clone(), capture.clone());
        let l_c = saliency_attention_loss(&stack, &item.mask).expect("non-empty capture");
        let dctx = if gamma > 0.0 {
            let dprobs = constraint_prob_grads(&capture, &content, &item.mask, gamma);
            m.backward_unet(&caches, &d_eps, Some(&dprobs))
        } else {
            m.backward_unet(&caches, &d_eps, None)
        };
        m.text.backward(&tcache, &dctx);
        (l_d, l_c)
    });
    let b = items.len().max(1) as f64;
    let l_d = losses.iter().map(|(a, _)| a).sum::<f64>() / b;
    let l_c = losses.iter().map(|(_, c)| c).sum::<f64>() / b;
    nn::zero_grads(model);
    nn::add_flat_grads(model, &grads);
    nn::scale_grads(model, 1.0 / items.len() as f32);
    nn::clip_grad_norm(model, grad_clip);
    opt.step(model);
    Ok((l_d, l_c))
}

/// Full training run from scratch. Deterministic in `tc.seed`.
pub fn train_diffusion(
    records: &[&BannerRecord],
    unet_cfg: &UNetConfig,
    tc: &DiffusionTrainConfig,
) -> Result<(DiffusionModel, NoiseSchedule, Vec<TrainStats>)> {
    if records.is_empty() {
        return Err(DesigenError::InvalidArgument("empty training set".into()));
    }
    for rec in records {
        let (h, w) = rec.saliency.dim();
        if h != unet_cfg.res || w != unet_cfg.res {
            return Err(DesigenError::InvalidArgument(format!(
                "record resolution {h}x{w} does not match model resolution {}",
                unet_cfg.res
            )));
        }
    }
    let schedule = make_noise_schedule(tc.schedule_t, tc.schedule_kind)?;
    let tokenizer = Tokenizer::from_grammar();
    let mut rng = derived_rng(tc.seed, "diffusion-init", 0);
    let mut model = DiffusionModel::new(&mut rng, unet_cfg.clone(), tokenizer, schedule.clone())?;
    let mut opt = AdamW::new(tc.lr, 0.9, 0.999, tc.weight_decay);
    let mut stats = Vec::with_capacity(tc.steps);
    let empty_tokens = model.tokenizer.encode("")?;
    for step in 0..tc.steps {
        let mut srng = derived_rng(tc.seed, "diffusion-step", step as u64);
        let items: Vec<TrainItem> = (0..tc.batch_size)
            .map(|_| {
                let idx = srng.gen_range(0..records.len());
                let rec = records[idx];
                let x0 = rec.image.mapv(|v| v * 2.0 - 1.0);
                let drop: f32 = srng.gen();
                let tokens = if drop < tc.cond_dropout {
                    empty_tokens.clone()
                } else {
                    model.tokenizer.encode(&rec.prompt).expect("corpus prompts are in-vocabulary")
                };
                let t = srng.gen_range(1..=schedule.t_max);
                let noise =
                    Array3::from_shape_fn(x0.raw_dim(), |_| StandardNormal.sample(&mut srng));
                TrainItem { x0, tokens, mask: constraint_target(rec, tc.constraint_mask), t, noise }
            })
            .collect();
        let warm = if tc.warmup_steps > 0 {
            ((step + 1) as f32 / tc.warmup_steps as f32).min(1.0)
        } else {
            1.0
        };
        opt.lr = tc.lr * warm;
        let (l_d, l_c) = run_step(&mut model, &mut opt, &items, &schedule, tc.gamma, tc.grad_clip)?;
        let l_total = l_d + tc.gamma as f64 * l_c;
        if !l_total.is_finite() {
            return Err(DesigenError::Divergence {
                step,
                detail: format!("l_d={l_d} l_c={l_c}"),
            });
        }
        if !tc.quiet && (step % 100 == 0 || step + 1 == tc.steps) {
            eprintln!(
                "diffusion step {step:>5}: l_d {l_d:.5}  l_c {l_c:.5}  l_total {l_total:.5}"
            );
        }
        stats.push(TrainStats { step, l_d, l_c, l_total, lr: opt.lr });
    }
    Ok((model, schedule, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_record, StyleSpace};

    fn tiny_unet_cfg() -> UNetConfig {
        UNetConfig {
            res: 32,
            channels: vec![8, 12, 16],
            attn: vec![false, true, true],
            t_dim: 32,
            txt_dim: 16,
            heads: 2,
            text_layers: 1,
        }
    }

    fn tiny_corpus(n: usize) -> Vec<BannerRecord> {
        (0..n as u64)
            .map(|s| synth_record(s, (32, 32), &StyleSpace::default()).unwrap())
            .collect()
    }

    #[test]
    fn bookkeeping_and_determinism() {
        let corpus = tiny_corpus(6);
        let refs: Vec<&BannerRecord> = corpus.iter().collect();
        let tc = DiffusionTrainConfig {
            steps: 4,
            batch_size: 3,
            lr: 1e-3,
            warmup_steps: 2,
            schedule_t: 50,
            gamma: 0.5,
            quiet: true,
            ..Default::default()
        };
        let (_, _, stats_a) = train_diffusion(&refs, &tiny_unet_cfg(), &tc).unwrap();
        let (_, _, stats_b) = train_diffusion(&refs, &tiny_unet_cfg(), &tc).unwrap();
        for (a, b) in stats_a.iter().zip(stats_b.iter()) {
            assert_eq!(a.l_total, b.l_total, "same seed must give identical losses");
            assert!((a.l_total - (a.l_d + 0.5 * a.l_c)).abs() < 1e-9);
            assert!(a.l_d >= 0.0 && a.l_c >= 0.0);
        }
    }

    #[test]
    fn gamma_zero_total_equals_ld() {
        let corpus = tiny_corpus(4);
        let refs: Vec<&BannerRecord> = corpus.iter().collect();
        let tc = DiffusionTrainConfig {
            steps: 2,
            batch_size: 2,
            schedule_t: 20,
            gamma: 0.0,
            quiet: true,
            ..Default::default()
        };
        let (_, _, stats) = train_diffusion(&refs, &tiny_unet_cfg(), &tc).unwrap();
        for s in &stats {
            assert_eq!(s.l_total, s.l_d);
        }
    }

    #[test]
    fn eq3_arithmetic() {
        let s = TrainStats { step: 0, l_d: 0.8, l_c: 0.2, l_total: 0.8 + 0.5 * 0.2, lr: 1e-4 };
        assert!((s.l_total - 0.9).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_over_short_run() {
        let corpus = tiny_corpus(8);
        let refs: Vec<&BannerRecord> = corpus.iter().collect();
        let tc = DiffusionTrainConfig {
            steps: 30,
            batch_size: 4,
            lr: 2e-3,
            warmup_steps: 5,
            schedule_t: 100,
            gamma: 0.5,
            quiet: true,
            ..Default::default()
        };
        let (_, _, stats) = train_diffusion(&refs, &tiny_unet_cfg(), &tc).unwrap();
        let head: f64 = stats[..5].iter().map(|s| s.l_d).sum::<f64>() / 5.0;
        let tail: f64 = stats[stats.len() - 5..].iter().map(|s| s.l_d).sum::<f64>() / 5.0;
        assert!(tail < head, "denoising loss should fall: {head} -> {tail}");
    }
}
