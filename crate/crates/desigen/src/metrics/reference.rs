//! Slow brute-force reference implementations of the layout/background
//! metrics, used by the test suites as an independent oracle. They rasterize
//! on a fixed 1000x1000 grid (point sampling at cell centers, nearest-pixel
//! saliency lookup) instead of the exact geometry in
//! [`super::layout_metrics`]. Do not use these in production paths.

use crate::corpus::LayoutElement;
use crate::raster::Gray;

pub const GRID: usize = 1000;

fn cell_center(i: usize) -> f64 {
    (i as f64 + 0.5) / GRID as f64
}

fn in_box(e: &LayoutElement, cx: f64, cy: f64) -> bool {
    cx >= e.left as f64 && cx < e.right() as f64 && cy >= e.top as f64 && cy < e.bottom() as f64
}

fn sample_map(map: &Gray, cx: f64, cy: f64) -> f64 {
    let (h, w) = map.dim();
    let px = ((cx * w as f64) as usize).min(w - 1);
    let py = ((cy * h as f64) as usize).min(h - 1);
    map[[py, px]] as f64
}

pub fn salient_ratio_ref(map: &Gray) -> f64 {
    let mut sum = 0.0;
    for iy in 0..GRID {
        let cy = cell_center(iy);
        for ix in 0..GRID {
            sum += sample_map(map, cell_center(ix), cy);
        }
    }
    sum / (GRID * GRID) as f64
}

pub fn overlap_ref(elements: &[LayoutElement]) -> f64 {
    let n = elements.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&elements[i], &elements[j]);
            let x0 = ((a.left.min(b.left) as f64) * GRID as f64).floor().max(0.0) as usize;
            let x1 = ((a.right().max(b.right()) as f64) * GRID as f64).ceil().min(GRID as f64) as usize;
            let y0 = ((a.top.min(b.top) as f64) * GRID as f64).floor().max(0.0) as usize;
            let y1 = ((a.bottom().max(b.bottom()) as f64) * GRID as f64).ceil().min(GRID as f64) as usize;
            let mut inter = 0usize;
            let mut union = 0usize;
            for iy in y0..y1 {
                let cy = cell_center(iy);
                for ix in x0..x1 {
                    let cx = cell_center(ix);
                    let ia = in_box(a, cx, cy);
                    let ib = in_box(b, cx, cy);
                    if ia && ib {
                        inter += 1;
                    }
                    if ia || ib {
                        union += 1;
                    }
                }
            }
            if union > 0 {
                total += inter as f64 / union as f64;
            }
            pairs += 1;
        }
    }
    total / pairs as f64 * 100.0
}

pub fn occlusion_ref(elements: &[LayoutElement], map: &Gray) -> f64 {
    if elements.is_empty() {
        return 0.0;
    }
    let mut mass = 0.0f64;
    let mut cells = 0usize;
    for e in elements {
        let x0 = ((e.left as f64) * GRID as f64).floor().max(0.0) as usize;
        let x1 = ((e.right() as f64) * GRID as f64).ceil().min(GRID as f64) as usize;
        let y0 = ((e.top as f64) * GRID as f64).floor().max(0.0) as usize;
        let y1 = ((e.bottom() as f64) * GRID as f64).ceil().min(GRID as f64) as usize;
        for iy in y0..y1 {
            let cy = cell_center(iy);
            for ix in x0..x1 {
                let cx = cell_center(ix);
                if in_box(e, cx, cy) {
                    mass += sample_map(map, cx, cy);
                    cells += 1;
                }
            }
        }
    }
    if cells == 0 {
        0.0
    } else {
        mass / cells as f64 * 100.0
    }
}

/// Exhaustive re-statement of the alignment definition with explicit loops
/// over the six anchor types.
pub fn alignment_ref(elements: &[LayoutElement]) -> f64 {
    let n = elements.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (&elements[i], &elements[j]);
            let candidates = [
                (a.left - b.left).abs(),
                (a.x_center() - b.x_center()).abs(),
                (a.right() - b.right()).abs(),
                (a.top - b.top).abs(),
                (a.y_center() - b.y_center()).abs(),
                (a.bottom() - b.bottom()).abs(),
            ];
            for c in candidates {
                best = best.min(c as f64);
            }
        }
        total += best;
    }
    total / n as f64 * 100.0
}
