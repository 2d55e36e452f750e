//! Spatial map plumbing: area/bilinear resizing and user region masks.

use crate::error::{DesigenError, Result};
use crate::raster::Gray;
use ndarray::Array2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    /// Exact box-overlap averaging; preserves the map mean.
    Area,
    /// Center-aligned bilinear interpolation.
    Bilinear,
}

/// Resizes a `[0,1]` map. Area mode computes the exact average of the input
/// region each output cell covers, so the mean is preserved; bilinear mode
/// matches the image resize convention. Values stay in `[0,1]`.
pub fn resize_map(map: &Gray, out: (usize, usize), mode: ResizeMode) -> Gray {
    let (h, w) = map.dim();
    let (oh, ow) = out;
    assert!(oh >= 1 && ow >= 1, "target resolution must be at least 1x1");
    if (h, w) == (oh, ow) {
        return map.clone();
    }
    match mode {
        ResizeMode::Area => {
            let sy = h as f64 / oh as f64;
            let sx = w as f64 / ow as f64;
            let mut outm = Array2::zeros((oh, ow));
            for oy in 0..oh {
                let y0 = oy as f64 * sy;
                let y1 = (oy as f64 + 1.0) * sy;
                let py0 = y0.floor() as usize;
                let py1 = (y1.ceil() as usize).min(h);
                for ox in 0..ow {
                    let x0 = ox as f64 * sx;
                    let x1 = (ox as f64 + 1.0) * sx;
                    let px0 = x0.floor() as usize;
                    let px1 = (x1.ceil() as usize).min(w);
                    let mut acc = 0.0f64;
                    for py in py0..py1 {
                        let fy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
                        if fy == 0.0 {
                            continue;
                        }
                        for px in px0..px1 {
                            let fx = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
                            if fx > 0.0 {
                                acc += map[[py, px]] as f64 * fx * fy;
                            }
                        }
                    }
                    outm[[oy, ox]] = (acc / (sy * sx)) as f32;
                }
            }
            outm
        }
        ResizeMode::Bilinear => {
            let mut outm = Array2::zeros((oh, ow));
            for oy in 0..oh {
                let sy = ((oy as f32 + 0.5) * h as f32 / oh as f32 - 0.5).clamp(0.0, h as f32 - 1.0);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let fy = sy - y0 as f32;
                for ox in 0..ow {
                    let sx = ((ox as f32 + 0.5) * w as f32 / ow as f32 - 0.5).clamp(0.0, w as f32 - 1.0);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let fx = sx - x0 as f32;
                    outm[[oy, ox]] = map[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
                        + map[[y0, x1]] * (1.0 - fy) * fx
                        + map[[y1, x0]] * fy * (1.0 - fx)
                        + map[[y1, x1]] * fy * fx;
                }
            }
            outm
        }
    }
}

/// User- or layout-derived region mask in `[0,1]` marking where space must be
/// preserved. Resolution is carried by the array shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pub values: Gray,
}

impl RegionMask {
    pub fn new(values: Gray) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DesigenError::InvalidArgument("region mask values must be in [0,1]".into()));
        }
        Ok(RegionMask { values })
    }

    pub fn full(h: usize, w: usize) -> Self {
        RegionMask { values: Array2::ones((h, w)) }
    }

    pub fn empty(h: usize, w: usize) -> Self {
        RegionMask { values: Array2::zeros((h, w)) }
    }

    /// Binary rectangle mask; coordinates normalized.
    pub fn rect(h: usize, w: usize, left: f32, top: f32, width: f32, height: f32) -> Self {
        let mut m = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let cx = (x as f32 + 0.5) / w as f32;
                let cy = (y as f32 + 0.5) / h as f32;
                if cx >= left && cx < left + width && cy >= top && cy < top + height {
                    m[[y, x]] = 1.0;
                }
            }
        }
        RegionMask { values: m }
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Fraction of masked area.
    pub fn coverage(&self) -> f64 {
        crate::metrics::salient_ratio(&self.values)
    }
}
