//! Procedural record synthesis with analytically known saliency.
//!
//! The saliency map is, by construction, the union of the object alpha masks
//! (`1 - prod(1 - alpha_i)`), anti-aliased by 4x4 supersampling. Image and
//! saliency are quantized to the 8-bit grid at the end, so persisted records
//! reload bit-identically and the filter decision is stable across IO.

use super::style::{color_rgb, BgKind, ObjectStyle, RecordStyle, ShapeKind, Side, StyleSpace, PALETTE};
use super::{make_prompt, BannerRecord, ElementCategory, LayoutElement, Split};
use crate::error::{DesigenError, Result};
use crate::raster::{Gray, Rgb};
use crate::rng::{derived_rng, Rng};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng as _;

const PLACEMENT_RETRIES: usize = 24;

/// Geometry of one placed object, in pixel coordinates.
#[derive(Clone, Debug)]
enum ObjectGeom {
    Circle { cx: f32, cy: f32, r: f32 },
    Rectangle { cx: f32, cy: f32, rw: f32, rh: f32 },
    Triangle { ax: f32, ay: f32, bx: f32, by: f32, cx: f32, cy: f32 },
    Blob { parts: Vec<(f32, f32, f32)> },
}

impl ObjectGeom {
    fn contains(&self, x: f32, y: f32) -> bool {
        match self {
            ObjectGeom::Circle { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            ObjectGeom::Rectangle { cx, cy, rw, rh } => (x - cx).abs() <= *rw && (y - cy).abs() <= *rh,
            ObjectGeom::Triangle { ax, ay, bx, by, cx, cy } => {
                let sign = |x1: f32, y1: f32, x2: f32, y2: f32, x3: f32, y3: f32| {
                    (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3)
                };
                let d1 = sign(x, y, *ax, *ay, *bx, *by);
                let d2 = sign(x, y, *bx, *by, *cx, *cy);
                let d3 = sign(x, y, *cx, *cy, *ax, *ay);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
            ObjectGeom::Blob { parts } => parts.iter().any(|(cx, cy, r)| {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }),
        }
    }

    fn bbox(&self) -> (f32, f32, f32, f32) {
        match self {
            ObjectGeom::Circle { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            ObjectGeom::Rectangle { cx, cy, rw, rh } => (cx - rw, cy - rh, cx + rw, cy + rh),
            ObjectGeom::Triangle { ax, ay, bx, by, cx, cy } => (
                ax.min(*bx).min(*cx),
                ay.min(*by).min(*cy),
                ax.max(*bx).max(*cx),
                ay.max(*by).max(*cy),
            ),
            ObjectGeom::Blob { parts } => {
                let mut b = (f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY);
                for (cx, cy, r) in parts {
                    b.0 = b.0.min(cx - r);
                    b.1 = b.1.min(cy - r);
                    b.2 = b.2.max(cx + r);
                    b.3 = b.3.max(cy + r);
                }
                b
            }
        }
    }
}

/// 4x4 supersampled coverage of the geometry, evaluated over its bbox only.
fn render_alpha(geom: &ObjectGeom, h: usize, w: usize) -> Gray {
    let mut alpha = Array2::zeros((h, w));
    let (x0, y0, x1, y1) = geom.bbox();
    let px0 = (x0.floor().max(0.0)) as usize;
    let py0 = (y0.floor().max(0.0)) as usize;
    let px1 = (x1.ceil().min(w as f32)) as usize;
    let py1 = (y1.ceil().min(h as f32)) as usize;
    const S: usize = 4;
    for py in py0..py1 {
        for px in px0..px1 {
            let mut hits = 0u32;
            for sy in 0..S {
                let y = py as f32 + (sy as f32 + 0.5) / S as f32;
                for sx in 0..S {
                    let x = px as f32 + (sx as f32 + 0.5) / S as f32;
                    if geom.contains(x, y) {
                        hits += 1;
                    }
                }
            }
            alpha[[py, px]] = hits as f32 / (S * S) as f32;
        }
    }
    alpha
}

fn render_background(style: &RecordStyle, rng: &mut Rng, h: usize, w: usize) -> Rgb {
    let base = color_rgb(style.bg_color);
    let mut img = Array3::zeros((3, h, w));
    match style.bg {
        BgKind::Flat => {
            for c in 0..3 {
                img.index_axis_mut(ndarray::Axis(0), c).fill(base[c]);
            }
        }
        BgKind::Gradient => {
            // fade towards white or black along a random axis
            let towards_white: bool = rng.gen();
            let horizontal: bool = rng.gen();
            let target = if towards_white { [1.0, 1.0, 1.0] } else { [0.35, 0.35, 0.35] };
            let strength: f32 = rng.gen_range(0.35..0.65);
            for y in 0..h {
                for x in 0..w {
                    let t = if horizontal { x as f32 / (w - 1) as f32 } else { y as f32 / (h - 1) as f32 };
                    for c in 0..3 {
                        img[[c, y, x]] = base[c] + (target[c] - base[c]) * t * strength;
                    }
                }
            }
        }
        BgKind::Stripes => {
            // low-contrast horizontal or vertical bands
            let horizontal: bool = rng.gen();
            let band: usize = rng.gen_range(3..6);
            let delta: f32 = rng.gen_range(0.04..0.08);
            for y in 0..h {
                for x in 0..w {
                    let idx = if horizontal { y / band } else { x / band };
                    let off = if idx % 2 == 0 { delta } else { -delta };
                    for c in 0..3 {
                        img[[c, y, x]] = (base[c] + off).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    img
}

fn side_center_range(side: Side, h: f32, w: f32, margin: f32) -> Option<(f32, f32, f32, f32)> {
    // (x_lo, x_hi, y_lo, y_hi) for the object center
    let (x_lo, x_hi, y_lo, y_hi) = match side {
        Side::Left => (margin, 0.38 * w, margin, h - margin),
        Side::Right => (0.62 * w, w - margin, margin, h - margin),
        Side::Top => (margin, w - margin, margin, 0.38 * h),
        Side::Bottom => (margin, w - margin, 0.62 * h, h - margin),
        Side::Center => (0.38 * w, 0.62 * w, 0.38 * h, 0.62 * h),
    };
    if x_lo >= x_hi || y_lo >= y_hi {
        None
    } else {
        Some((x_lo, x_hi, y_lo, y_hi))
    }
}

fn sample_geometry(
    rng: &mut Rng,
    obj: &ObjectStyle,
    space: &StyleSpace,
    h: usize,
    w: usize,
) -> Option<ObjectGeom> {
    let min_dim = h.min(w) as f32;
    let r = rng.gen_range(space.object_scale_min..space.object_scale_max) * min_dim;
    let margin = r + 1.0;
    let (x_lo, x_hi, y_lo, y_hi) = side_center_range(obj.side, h as f32, w as f32, margin)?;
    let cx = rng.gen_range(x_lo..x_hi.max(x_lo + 1e-3));
    let cy = rng.gen_range(y_lo..y_hi.max(y_lo + 1e-3));
    Some(match obj.shape {
        ShapeKind::Circle => ObjectGeom::Circle { cx, cy, r },
        ShapeKind::Rectangle => {
            let aspect: f32 = rng.gen_range(0.6..1.5);
            ObjectGeom::Rectangle { cx, cy, rw: r * aspect.min(1.0), rh: r / aspect.max(1.0) }
        }
        ShapeKind::Triangle => {
            let spread: f32 = rng.gen_range(0.8..1.1);
            ObjectGeom::Triangle {
                ax: cx,
                ay: cy - r,
                bx: cx - r * spread,
                by: cy + r * 0.8,
                cx: cx + r * spread,
                cy: cy + r * 0.8,
            }
        }
        ShapeKind::Blob => {
            let mut parts = Vec::new();
            parts.push((cx, cy, r * 0.75));
            for _ in 0..2 {
                let dx = rng.gen_range(-0.5..0.5) * r;
                let dy = rng.gen_range(-0.5..0.5) * r;
                let rr = rng.gen_range(0.45..0.7) * r;
                parts.push((cx + dx, cy + dy, rr));
            }
            ObjectGeom::Blob { parts }
        }
    })
}

fn sample_style(rng: &mut Rng, space: &StyleSpace) -> RecordStyle {
    let bg = *space.bg_kinds.choose(rng).expect("style space has no background kinds");
    let bg_color = rng.gen_range(0..PALETTE.len());
    let n_objects = if space.object_count_max == 0 {
        0
    } else {
        rng.gen_range(space.object_count_min..=space.object_count_max)
    };
    let mut sides = Side::ALL.to_vec();
    sides.shuffle(rng);
    let mut objects = Vec::new();
    for i in 0..n_objects {
        let shape = *space.shapes.choose(rng).expect("style space has no shapes");
        let mut color = rng.gen_range(0..PALETTE.len());
        while color == bg_color {
            color = rng.gen_range(0..PALETTE.len());
        }
        objects.push(ObjectStyle { shape, color, side: sides[i % sides.len()] });
    }
    RecordStyle { objects, bg, bg_color }
}

fn quantize8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Stacks 1..N left-aligned elements on a grid guide in the half of the
/// canvas with less saliency mass. Returns None when the stack cannot fit.
fn place_elements(rng: &mut Rng, space: &StyleSpace, saliency: &Gray) -> Option<Vec<LayoutElement>> {
    let bins = space.grid_bins;
    let n = rng.gen_range(space.element_count_min..=space.element_count_max.max(space.element_count_min));
    if n == 0 {
        return Some(Vec::new());
    }
    let (h, w) = saliency.dim();
    // choose emptier half by saliency column mass
    let mut left_mass = 0.0f32;
    let mut right_mass = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            if x < w / 2 {
                left_mass += saliency[[y, x]];
            } else {
                right_mass += saliency[[y, x]];
            }
        }
    }
    let hb = bins / 2;
    let max_w = hb.saturating_sub(3).max(3);
    let mut best: Option<(f64, Vec<LayoutElement>)> = None;
    for _attempt in 0..6 {
        let width_bins = rng.gen_range(3..=max_w.min(12));
        let guide = if left_mass <= right_mass {
            rng.gen_range(1..(hb.saturating_sub(width_bins)).max(2))
        } else {
            rng.gen_range(hb..(bins - 1 - width_bins).max(hb + 1))
        };
        let mut top = rng.gen_range(1..4usize);
        let mut elements = Vec::new();
        for i in 0..n {
            let category = if i == 0 {
                ElementCategory::Text
            } else {
                *[ElementCategory::Text, ElementCategory::Button, ElementCategory::Image]
                    .choose(rng)
                    .unwrap()
            };
            let (eh, ew) = match category {
                ElementCategory::Text => (rng.gen_range(2..4usize), width_bins),
                ElementCategory::Button => (rng.gen_range(2..4usize), (width_bins / 2).max(2)),
                ElementCategory::Image => (rng.gen_range(4..7usize), width_bins),
            };
            if top + eh >= bins {
                break;
            }
            elements.push(LayoutElement::new(
                category,
                guide as f32 / bins as f32,
                top as f32 / bins as f32,
                ew as f32 / bins as f32,
                eh as f32 / bins as f32,
            ));
            top += eh + 1;
        }
        if elements.is_empty() {
            continue;
        }
        let occ = crate::metrics::occlusion(&elements, saliency) / 100.0;
        if best.as_ref().map(|(b, _)| occ < *b).unwrap_or(true) {
            best = Some((occ, elements));
        }
        if occ < 0.1 {
            break;
        }
    }
    best.map(|(_, e)| e)
}

/// Full synthesis output, including the per-object alpha masks that the
/// saliency-consistency invariant checks against.
pub struct SynthDetail {
    pub record: BannerRecord,
    pub style: RecordStyle,
    pub alphas: Vec<Gray>,
}

pub fn synth_record_detailed(
    rng_seed: u64,
    canvas: (usize, usize),
    space: &StyleSpace,
) -> Result<SynthDetail> {
    let (h, w) = canvas;
    if h < 32 || w < 32 {
        return Err(DesigenError::InvalidArgument(format!(
            "canvas must be at least 32x32, got {h}x{w}"
        )));
    }
    let mut rng = derived_rng(rng_seed, "synth", 0);
    for _attempt in 0..PLACEMENT_RETRIES {
        let style = sample_style(&mut rng, space);
        let mut geoms = Vec::new();
        let mut ok = true;
        for obj in &style.objects {
            match sample_geometry(&mut rng, obj, space, h, w) {
                Some(g) => geoms.push(g),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mut image = render_background(&style, &mut rng, h, w);
        let mut saliency: Gray = Array2::zeros((h, w));
        let mut alphas = Vec::new();
        for (geom, obj) in geoms.iter().zip(style.objects.iter()) {
            let alpha = render_alpha(geom, h, w);
            let rgb = color_rgb(obj.color);
            for y in 0..h {
                for x in 0..w {
                    let a = alpha[[y, x]];
                    if a > 0.0 {
                        for c in 0..3 {
                            image[[c, y, x]] = image[[c, y, x]] * (1.0 - a) + rgb[c] * a;
                        }
                        saliency[[y, x]] = 1.0 - (1.0 - saliency[[y, x]]) * (1.0 - a);
                    }
                }
            }
            alphas.push(alpha);
        }
        let elements = match place_elements(&mut rng, space, &saliency) {
            Some(e) => e,
            None => continue,
        };
        if !style.objects.is_empty() && elements.is_empty() {
            continue;
        }
        // quantize to the 8-bit grid so persisted records reload bit-identically
        image.mapv_inplace(quantize8);
        saliency.mapv_inplace(quantize8);
        let prompt = make_prompt(&style);
        let record = BannerRecord { image, saliency, elements, prompt, split: Split::Train };
        record.validate()?;
        return Ok(SynthDetail { record, style, alphas });
    }
    Err(DesigenError::PlacementFailure(format!(
        "could not place objects/elements after {PLACEMENT_RETRIES} attempts (seed {rng_seed})"
    )))
}

/// Synthesizes one record; deterministic in `rng_seed`.
pub fn synth_record(rng_seed: u64, canvas: (usize, usize), space: &StyleSpace) -> Result<BannerRecord> {
    synth_record_detailed(rng_seed, canvas, space).map(|d| d.record)
}
