//! Noise schedule and the closed-form forward process.

use crate::error::{DesigenError, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Per-timestep noise levels, 1-indexed by convention: `betas[t]` for
/// `t in 1..=t_max`, `alpha_bars[0] = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub t_max: usize,
    pub betas: Vec<f32>,      // len t_max + 1, index 0 unused
    pub alphas: Vec<f32>,     // 1 - beta
    pub alpha_bars: Vec<f32>, // cumulative products, len t_max + 1
}

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;

pub fn make_noise_schedule(t_max: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(DesigenError::InvalidArgument("schedule needs at least one step".into()));
    }
    let mut betas = vec![0.0f32; t_max + 1];
    match kind {
        ScheduleKind::Linear => {
            for t in 1..=t_max {
                let frac = if t_max == 1 { 0.0 } else { (t - 1) as f64 / (t_max - 1) as f64 };
                betas[t] = (LINEAR_BETA_START + (LINEAR_BETA_END - LINEAR_BETA_START) * frac) as f32;
            }
        }
        ScheduleKind::Cosine => {
            let s = 0.008f64;
            let f = |t: f64| ((t / t_max as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            let f0 = f(0.0);
            let mut prev = 1.0f64;
            for t in 1..=t_max {
                let ab = f(t as f64) / f0;
                let beta = (1.0 - ab / prev).clamp(1e-8, 0.999);
                betas[t] = beta as f32;
                prev *= 1.0 - beta;
            }
        }
    }
    let mut alphas = vec![0.0f32; t_max + 1];
    let mut alpha_bars = vec![0.0f32; t_max + 1];
    alpha_bars[0] = 1.0;
    for t in 1..=t_max {
        alphas[t] = 1.0 - betas[t];
        alpha_bars[t] = alpha_bars[t - 1] * alphas[t];
    }
    let schedule = NoiseSchedule { kind, t_max, betas, alphas, alpha_bars };
    schedule.validate()?;
    Ok(schedule)
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        for t in 1..=self.t_max {
            if !(self.betas[t] > 0.0 && self.betas[t] < 1.0) {
                return Err(DesigenError::Internal(format!("beta out of range at t={t}")));
            }
            if self.alpha_bars[t] >= self.alpha_bars[t - 1] {
                return Err(DesigenError::Internal(format!(
                    "alpha_bar not strictly decreasing at t={t}"
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form forward draw: `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise`.
pub fn q_sample(
    x0: &Array3<f32>,
    t: usize,
    noise: &Array3<f32>,
    schedule: &NoiseSchedule,
) -> Result<Array3<f32>> {
    if t < 1 || t > schedule.t_max {
        return Err(DesigenError::InvalidArgument(format!(
            "timestep {t} outside schedule 1..={}",
            schedule.t_max
        )));
    }
    if x0.dim() != noise.dim() {
        return Err(DesigenError::InvalidArgument("x0/noise shape mismatch".into()));
    }
    let ab = schedule.alpha_bars[t];
    Ok(x0.mapv(|v| v * ab.sqrt()) + noise.mapv(|v| v * (1.0 - ab).sqrt()))
}
