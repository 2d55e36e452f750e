//! Layout and background metrics.
//!
//! Conventions, fixed here and used everywhere: coordinates are normalized,
//! alignment/overlap/occlusion are reported on a x100 scale, salient ratio is
//! a plain fraction in [0,1] (reports multiply by 100 for display).
//! Saliency mass under a box is the exact integral of the piecewise-constant
//! saliency map over the box, so partially covered pixels count fractionally.

use crate::corpus::LayoutElement;
use crate::raster::Gray;

/// Saliency-map mass over total resolution, in [0, 1].
pub fn salient_ratio(map: &Gray) -> f64 {
    let n = map.len();
    if n == 0 {
        return 0.0;
    }
    map.iter().map(|v| *v as f64).sum::<f64>() / n as f64
}

/// Average minimum same-anchor distance (x: left/center/right, y:
/// top/center/bottom) between any element pairs, x100. Fewer than two
/// elements score 0 by convention.
pub fn alignment(elements: &[LayoutElement]) -> f64 {
    let n = elements.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0f64;
    for (i, a) in elements.iter().enumerate() {
        let ax = [a.left, a.x_center(), a.right()];
        let ay = [a.top, a.y_center(), a.bottom()];
        let mut best = f64::INFINITY;
        for (j, b) in elements.iter().enumerate() {
            if i == j {
                continue;
            }
            let bx = [b.left, b.x_center(), b.right()];
            let by = [b.top, b.y_center(), b.bottom()];
            for k in 0..3 {
                best = best.min((ax[k] - bx[k]).abs() as f64);
                best = best.min((ay[k] - by[k]).abs() as f64);
            }
        }
        total += best;
    }
    total / n as f64 * 100.0
}

fn iou(a: &LayoutElement, b: &LayoutElement) -> f64 {
    let (al, at, ar, ab) = (a.left as f64, a.top as f64, a.right() as f64, a.bottom() as f64);
    let (bl, bt, br, bb) = (b.left as f64, b.top as f64, b.right() as f64, b.bottom() as f64);
    let ix = (ar.min(br) - al.max(bl)).max(0.0);
    let iy = (ab.min(bb) - at.max(bt)).max(0.0);
    let inter = ix * iy;
    let union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Mean IoU over all unordered element pairs, x100. Fewer than two elements
/// score 0.
pub fn overlap(elements: &[LayoutElement]) -> f64 {
    let n = elements.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += iou(&elements[i], &elements[j]);
            pairs += 1;
        }
    }
    total / pairs as f64 * 100.0
}

/// Exact integral of the saliency map over a box given in pixel coordinates.
fn mass_in_box(map: &Gray, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (h, w) = map.dim();
    let px0 = x0.floor().max(0.0) as usize;
    let py0 = y0.floor().max(0.0) as usize;
    let px1 = (x1.ceil() as usize).min(w);
    let py1 = (y1.ceil() as usize).min(h);
    let mut mass = 0.0f64;
    for py in py0..py1 {
        let oy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
        if oy == 0.0 {
            continue;
        }
        for px in px0..px1 {
            let ox = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
            if ox > 0.0 {
                mass += map[[py, px]] as f64 * ox * oy;
            }
        }
    }
    mass
}

/// Saliency mass under all element boxes normalized by the summed element
/// area, x100. Overlapping elements double-count in both numerator and
/// denominator. Empty layouts score 0.
pub fn occlusion(elements: &[LayoutElement], map: &Gray) -> f64 {
    if elements.is_empty() {
        return 0.0;
    }
    let (h, w) = map.dim();
    let (hf, wf) = (h as f64, w as f64);
    let mut mass = 0.0f64;
    let mut area = 0.0f64;
    for e in elements {
        let x0 = e.left as f64 * wf;
        let x1 = e.right() as f64 * wf;
        let y0 = e.top as f64 * hf;
        let y1 = e.bottom() as f64 * hf;
        mass += mass_in_box(map, x0, y0, x1, y1);
        area += (x1 - x0) * (y1 - y0);
    }
    if area <= 0.0 {
        0.0
    } else {
        mass / area * 100.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ElementCategory;
    use ndarray::Array2;

    fn el(left: f32, top: f32, width: f32, height: f32) -> LayoutElement {
        LayoutElement::new(ElementCategory::Text, left, top, width, height)
    }

    #[test]
    fn salient_ratio_cases() {
        let zero: Gray = Array2::zeros((4, 4));
        assert_eq!(salient_ratio(&zero), 0.0);
        let ones: Gray = Array2::ones((4, 4));
        assert_eq!(salient_ratio(&ones), 1.0);
        let mut four: Gray = Array2::zeros((4, 4));
        for i in 0..4 {
            four[[i, i]] = 1.0;
        }
        assert!((salient_ratio(&four) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn alignment_cases() {
        // shared left edge -> exact zero
        let a = el(0.2, 0.1, 0.3, 0.1);
        let b = el(0.2, 0.5, 0.4, 0.2);
        assert_eq!(alignment(&[a, b]), 0.0);
        // single element -> 0 by convention
        assert_eq!(alignment(&[a]), 0.0);
        // lefts 0.10 / 0.13 with no closer anchors -> 3.0
        let c = el(0.10, 0.10, 0.30, 0.20);
        let d = el(0.13, 0.62, 0.42, 0.31);
        assert!((alignment(&[c, d]) - 3.0).abs() < 1e-4);
    }

    #[test]
    fn overlap_cases() {
        let a = el(0.1, 0.1, 0.2, 0.2);
        assert_eq!(overlap(&[a, a]), 100.0);
        let b = el(0.6, 0.6, 0.2, 0.2);
        assert_eq!(overlap(&[a, b]), 0.0);
        // boxes (0,0,.2,.2) and (.1,0,.2,.2): IoU = 1/3
        let c = el(0.0, 0.0, 0.2, 0.2);
        let d = el(0.1, 0.0, 0.2, 0.2);
        assert!((overlap(&[c, d]) - 100.0 / 3.0).abs() < 1e-6);
        assert_eq!(overlap(&[a]), 0.0);
    }

    #[test]
    fn occlusion_cases() {
        let zero: Gray = Array2::zeros((8, 8));
        let e = el(0.25, 0.25, 0.5, 0.5);
        assert_eq!(occlusion(&[e], &zero), 0.0);
        assert_eq!(occlusion(&[], &zero), 0.0);
        // element exactly covering an all-ones salient region
        let mut map: Gray = Array2::zeros((8, 8));
        for y in 2..6 {
            for x in 2..6 {
                map[[y, x]] = 1.0;
            }
        }
        assert!((occlusion(&[e], &map) - 100.0).abs() < 1e-9);
        // element half over the binary region
        let half = el(0.25, 0.25, 1.0 - 0.25, 0.5); // extends right past the region
        let expect = (16.0 / 24.0) * 100.0; // mass 16 px over area 0.75*0.5*64 = 24 px
        assert!((occlusion(&[half], &map) - expect).abs() < 1e-9);
        // pure half-coverage case: region occupies left half of the box
        let e2 = el(0.25, 0.25, 0.5, 0.25);
        let mut m2: Gray = Array2::zeros((8, 8));
        for y in 2..4 {
            for x in 2..4 {
                m2[[y, x]] = 1.0;
            }
        }
        assert!((occlusion(&[e2], &m2) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn occlusion_handles_fractional_pixel_coverage() {
        let mut map: Gray = Array2::zeros((4, 4));
        map[[0, 0]] = 1.0;
        // box covering exactly the top-left quarter pixel
        let e = el(0.0, 0.0, 0.125, 0.125);
        // mass = 0.25 px, area = 0.25 px -> 100
        assert!((occlusion(&[e], &map) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn moving_off_salient_region_decreases_occlusion() {
        let mut map: Gray = Array2::zeros((16, 16));
        for y in 0..8 {
            for x in 0..8 {
                map[[y, x]] = 1.0;
            }
        }
        let on = el(0.0, 0.0, 0.25, 0.25);
        let off = el(0.6, 0.6, 0.25, 0.25);
        assert!(occlusion(&[on], &map) > occlusion(&[off], &map));
    }
}
