//! Desigen: an end-to-end design template generator.
//!
//! The pipeline couples four trainable parts over a procedurally generated
//! banner corpus with analytically known saliency:
//!
//! 1. [`corpus`] — synthesizes and persists the banner dataset (background,
//!    saliency map, layout elements, prompt) with rejection filtering on
//!    salient ratio and occlusion.
//! 2. [`saliency`] — a small encoder–decoder detector providing the saliency
//!    signal for images whose ground truth is unknown.
//! 3. [`diffusion`] — a text-conditioned pixel-space denoiser with
//!    cross-attention capture, a salient attention constraint loss at train
//!    time, attention reduction at inference, DDPM/DDIM sampling and DDIM
//!    inversion.
//! 4. [`layout`] — background-conditioned autoregressive layout generation
//!    over flattened token sequences.
//!
//! [`pipeline`] orchestrates template generation, iterative
//! background/layout refinement and theme-consistent deck generation;
//! [`metrics`] carries all quantitative evaluation. Everything is seeded and
//! deterministic: identical seeds reproduce bit-identical corpora,
//! checkpoints and samples.

pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod saliency;

pub mod cli;

pub use error::{DesigenError, Result};
