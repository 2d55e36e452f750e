//! Diffusion checkpoints: versioned header (architecture, schedule,
//! vocabulary, training provenance) plus all parameters.

use super::schedule::{make_noise_schedule, ScheduleKind};
use super::text::Tokenizer;
use super::unet::{DiffusionModel, UNetConfig};
use crate::error::Result;
use crate::nn;
use crate::rng::derived_rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionHeader {
    pub version: u32,
    pub unet: UNetConfig,
    pub schedule_kind: ScheduleKind,
    pub schedule_t: usize,
    pub words: Vec<String>,
    pub gamma: f32,
    pub train_steps: usize,
    pub train_seed: u64,
}

pub fn save_diffusion(
    model: &mut DiffusionModel,
    gamma: f32,
    train_steps: usize,
    train_seed: u64,
    path: &Path,
) -> Result<()> {
    let header = DiffusionHeader {
        version: 1,
        unet: model.cfg.clone(),
        schedule_kind: model.schedule.kind,
        schedule_t: model.schedule.t_max,
        words: model.tokenizer.words().to_vec(),
        gamma,
        train_steps,
        train_seed,
    };
    nn::ckpt::save(model, &header, path)
}

pub fn load_diffusion(path: &Path) -> Result<(DiffusionModel, DiffusionHeader)> {
    let header: DiffusionHeader = nn::ckpt::load_header(path)?;
    let tokenizer = Tokenizer::new(header.words.clone());
    let schedule = make_noise_schedule(header.schedule_t, header.schedule_kind)?;
    let mut rng = derived_rng(0, "diffusion-load", 0);
    let mut model = DiffusionModel::new(&mut rng, header.unet.clone(), tokenizer, schedule)?;
    nn::ckpt::load_into(&mut model, path)?;
    Ok((model, header))
}

/// Short content hash of a checkpoint file, for provenance records.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| crate::error::DesigenError::io(path.display().to_string(), e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex::encode(&h.finalize()[..8]))
}
