//! Sampling (deterministic DDIM, ancestral DDPM) with attention capture and
//! reduction, plus DDIM inversion to the initial latent.

use super::attention_ops::AttentionStack;
use super::unet::{DiffusionModel, ReduceScales};
use super::{GenerationConfig, SamplerKind};
use crate::error::{DesigenError, Result};
use crate::raster::Rgb;
use crate::rng::derived_rng;
use crate::saliency::RegionMask;
use ndarray::{Array2, Array3};
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub image: Rgb,
    pub attention: AttentionStack,
}

/// Ascending timestep grid `[T/S, 2T/S, ..., T]`; caps `steps` at `t_max`.
fn tau_grid(t_max: usize, steps: usize) -> Vec<usize> {
    let s = steps.clamp(1, t_max);
    (1..=s).map(|i| i * t_max / s).collect()
}

fn predict_eps(
    model: &DiffusionModel,
    x: &Array3<f32>,
    t: usize,
    ctx: &Array2<f32>,
    reduce: Option<&ReduceScales>,
) -> (Array3<f32>, super::StepCapture) {
    let (eps, _, capture) = model.forward_unet(x, t, ctx, reduce);
    (eps, capture)
}

/// Core sampling loop. `init_latent` forces the deterministic DDIM path from
/// the given latent; otherwise the initial latent is drawn from `cfg.seed`.
pub fn sample_with_latent(
    model: &DiffusionModel,
    prompt: &str,
    cfg: &GenerationConfig,
    mask: Option<&RegionMask>,
    init_latent: Option<Array3<f32>>,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let (tokens, ctx, content) = model.encode_text(prompt)?;
    debug_assert_eq!(tokens.len(), ctx.nrows());
    let use_cfg = cfg.guidance_scale != 1.0;
    let ctx_uncond = if use_cfg {
        let (_, cu, _) = model.encode_text("")?;
        Some(cu)
    } else {
        None
    };
    let reduce = mask.map(|m| model.make_reduce_scales(&m.values, cfg.beta_reduce));
    let res = model.cfg.res;
    let schedule = &model.schedule;
    let mut rng = derived_rng(cfg.seed, "sample", 0);
    // a caller-provided latent forces the deterministic sampler
    let ddim = init_latent.is_some() || cfg.sampler == SamplerKind::Ddim;
    let mut x = match init_latent {
        Some(l) => {
            if l.dim() != (3, res, res) {
                return Err(DesigenError::InvalidArgument(format!(
                    "init latent shape {:?} does not match model resolution {res}",
                    l.dim()
                )));
            }
            l
        }
        None => Array3::from_shape_fn((3, res, res), |_| StandardNormal.sample(&mut rng)),
    };
    let mut stack = AttentionStack { content, steps: Vec::new() };
    let eval = |x: &Array3<f32>, t: usize, stack: &mut AttentionStack| -> Array3<f32> {
        let (eps_c, capture) = predict_eps(model, x, t, &ctx, reduce.as_ref());
        stack.steps.push(capture);
        match &ctx_uncond {
            Some(cu) => {
                let (eps_u, _) = predict_eps(model, x, t, cu, reduce.as_ref());
                &eps_u + &(&eps_c - &eps_u).mapv(|v| v * cfg.guidance_scale)
            }
            None => eps_c,
        }
    };
    if ddim {
        let taus = tau_grid(schedule.t_max, cfg.sample_steps);
        for i in (0..taus.len()).rev() {
            let t = taus[i];
            let t_prev = if i == 0 { 0 } else { taus[i - 1] };
            let eps = eval(&x, t, &mut stack);
            let ab_t = schedule.alpha_bars[t];
            let ab_p = schedule.alpha_bars[t_prev];
            let x0 = (&x - &eps.mapv(|v| v * (1.0 - ab_t).sqrt())).mapv(|v| v / ab_t.sqrt());
            x = x0.mapv(|v| v * ab_p.sqrt()) + eps.mapv(|v| v * (1.0 - ab_p).sqrt());
        }
    } else {
        for t in (1..=schedule.t_max).rev() {
            let eps = eval(&x, t, &mut stack);
            let beta = schedule.betas[t];
            let alpha = schedule.alphas[t];
            let ab_t = schedule.alpha_bars[t];
            let coef = beta / (1.0 - ab_t).sqrt();
            let mean = (&x - &eps.mapv(|v| v * coef)).mapv(|v| v / alpha.sqrt());
            if t > 1 {
                let ab_prev = schedule.alpha_bars[t - 1];
                let sigma = ((1.0 - ab_prev) / (1.0 - ab_t) * beta).sqrt();
                let z = Array3::from_shape_fn((3, res, res), |_| {
                    let v: f32 = StandardNormal.sample(&mut rng);
                    v
                });
                x = mean + z.mapv(|v| v * sigma);
            } else {
                x = mean;
            }
        }
    }
    let image = x.mapv(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0));
    Ok(SampleOutput { image, attention: stack })
}

/// Text-conditioned generation from noise; see [`sample_with_latent`].
pub fn sample(
    model: &DiffusionModel,
    prompt: &str,
    cfg: &GenerationConfig,
    mask: Option<&RegionMask>,
) -> Result<SampleOutput> {
    sample_with_latent(model, prompt, cfg, mask, None)
}

/// Deterministic DDIM inversion of an image (in `[0,1]`) to the latent at
/// `t_max`, evaluating the denoiser at the target timestep of each hop.
/// Re-running DDIM from the result with the same prompt and step count
/// reconstructs the image up to the inversion approximation error.
pub fn ddim_invert(
    model: &DiffusionModel,
    image: &Rgb,
    prompt: &str,
    steps: usize,
) -> Result<Array3<f32>> {
    if steps < 2 {
        return Err(DesigenError::InvalidArgument("inversion needs at least 2 steps".into()));
    }
    let res = model.cfg.res;
    if image.dim() != (3, res, res) {
        return Err(DesigenError::InvalidArgument(format!(
            "image shape {:?} does not match model resolution {res}",
            image.dim()
        )));
    }
    let (_, ctx, _) = model.encode_text(prompt)?;
    let schedule = &model.schedule;
    let taus = tau_grid(schedule.t_max, steps);
    let mut x = image.mapv(|v| v * 2.0 - 1.0);
    for i in 0..taus.len() {
        let t_prev = if i == 0 { 0 } else { taus[i - 1] };
        let t_next = taus[i];
        let (eps, _) = predict_eps(model, &x, t_next, &ctx, None);
        let ab_p = schedule.alpha_bars[t_prev];
        let ab_n = schedule.alpha_bars[t_next];
        let x0 = (&x - &eps.mapv(|v| v * (1.0 - ab_p).sqrt())).mapv(|v| v / ab_p.sqrt());
        x = x0.mapv(|v| v * ab_n.sqrt()) + eps.mapv(|v| v * (1.0 - ab_n).sqrt());
    }
    Ok(x)
}
