//! Layout -> region mask conversion for attention reduction.

use crate::corpus::LayoutElement;
use crate::saliency::RegionMask;
use ndarray::Array2;

/// Binary union of the element boxes rasterized at `resolution`: a cell is 1
/// iff its center lies inside any box.
pub fn layout_to_mask(elements: &[LayoutElement], resolution: (usize, usize)) -> RegionMask {
    let (h, w) = resolution;
    let mut m = Array2::zeros((h, w));
    for y in 0..h {
        let cy = (y as f32 + 0.5) / h as f32;
        for x in 0..w {
            let cx = (x as f32 + 0.5) / w as f32;
            let inside = elements.iter().any(|e| {
                cx >= e.left && cx < e.right() && cy >= e.top && cy < e.bottom()
            });
            if inside {
                m[[y, x]] = 1.0;
            }
        }
    }
    RegionMask { values: m }
}
