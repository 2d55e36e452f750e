//! Text-conditioned denoising diffusion with saliency-aware attention
//! control.
//!
//! Training adds an auxiliary constraint on the captured cross-attention
//! (weighted by the saliency map of the input, `gamma`-scaled); sampling
//! optionally reduces attention rows inside a region mask by `beta`. Both
//! knobs, the sampler and the seed live in [`GenerationConfig`].

pub mod attention_ops;
pub mod ckpt;
pub mod sample;
pub mod schedule;
pub mod text;
pub mod train;
pub mod unet;

pub use attention_ops::{
    aggregate_attention, aggregate_attention_raw, constraint_prob_grads, reduce_attention,
    saliency_attention_loss, AttentionStack, AttnLayerCapture, StepCapture,
};
pub use ckpt::{checkpoint_id, load_diffusion, save_diffusion, DiffusionHeader};
pub use sample::{ddim_invert, sample, sample_with_latent, SampleOutput};
pub use schedule::{make_noise_schedule, q_sample, NoiseSchedule, ScheduleKind};
pub use text::{Tokenizer, MAX_TEXT_LEN};
pub use train::{train_diffusion, ConstraintMask, DiffusionTrainConfig, TrainStats};
pub use unet::{DiffusionModel, ReduceScales, UNetConfig};

use crate::error::{DesigenError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    None,
    User,
    Layout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Deterministic, supports inversion and init latents.
    Ddim,
    /// Ancestral sampling over the full schedule.
    Ddpm,
}

/// Every generation-time knob, echoed into provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub gamma: f32,
    pub beta_reduce: f32,
    pub sample_steps: usize,
    pub guidance_scale: f32,
    pub seed: u64,
    pub mask_source: MaskSource,
    pub sampler: SamplerKind,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            gamma: 0.5,
            beta_reduce: 0.01,
            sample_steps: 50,
            guidance_scale: 1.0,
            seed: 0,
            mask_source: MaskSource::None,
            sampler: SamplerKind::Ddim,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(DesigenError::InvalidArgument("gamma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_reduce) {
            return Err(DesigenError::InvalidArgument("beta_reduce must be in [0,1]".into()));
        }
        if self.sample_steps == 0 {
            return Err(DesigenError::InvalidArgument("sample_steps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_config_bounds() {
        assert!(GenerationConfig::default().validate().is_ok());
        assert!(GenerationConfig { gamma: -0.1, ..Default::default() }.validate().is_err());
        assert!(GenerationConfig { beta_reduce: 1.5, ..Default::default() }.validate().is_err());
    }
}
