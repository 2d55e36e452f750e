//! Attention–saliency correlation analysis: invert a corpus image, resample
//! it while capturing cross-attention, aggregate the attention into one
//! spatial map and compare it with the detected saliency map by cosine.

use crate::diffusion::{aggregate_attention, ddim_invert, sample_with_latent, DiffusionModel, GenerationConfig};
use crate::raster::{Gray, Rgb};
use crate::saliency::SaliencyDetector;

/// Per-image outcome; failures are reported, not fatal.
#[derive(Clone, Debug)]
pub enum AttnSimOutcome {
    Cosine(f64),
    Failed(String),
}

/// Cosine between two maps flattened to vectors; zero vectors give 0.
pub fn map_cosine(a: &Gray, b: &Gray) -> f64 {
    assert_eq!(a.dim(), b.dim(), "map_cosine: resolution mismatch");
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += (*x as f64) * (*y as f64);
        na += (*x as f64) * (*x as f64);
        nb += (*y as f64) * (*y as f64);
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Runs the inversion → resample → aggregate → cosine procedure for each
/// image. `invert_steps` controls the DDIM grid for both directions.
pub fn attention_saliency_similarity(
    model: &DiffusionModel,
    images: &[(Rgb, String)],
    detector: &SaliencyDetector,
    invert_steps: usize,
    cfg: &GenerationConfig,
) -> Vec<AttnSimOutcome> {
    use rayon::prelude::*;
    images
        .par_iter()
        .map(|(image, prompt)| {
            let latent = match ddim_invert(model, image, prompt, invert_steps) {
                Ok(l) => l,
                Err(e) => return AttnSimOutcome::Failed(format!("inversion: {e}")),
            };
            let mut gen_cfg = cfg.clone();
            gen_cfg.sample_steps = invert_steps;
            let out = match sample_with_latent(model, prompt, &gen_cfg, None, Some(latent)) {
                Ok(o) => o,
                Err(e) => return AttnSimOutcome::Failed(format!("resample: {e}")),
            };
            let (h, w) = (image.shape()[1], image.shape()[2]);
            let agg = aggregate_attention(&out.attention, (h, w));
            match agg {
                Ok(map) => {
                    let detected = detector.detect(image);
                    match detected {
                        Ok(sal) => AttnSimOutcome::Cosine(map_cosine(&map, &sal)),
                        Err(e) => AttnSimOutcome::Failed(format!("detect: {e}")),
                    }
                }
                Err(e) => AttnSimOutcome::Failed(format!("aggregate: {e}")),
            }
        })
        .collect()
}
