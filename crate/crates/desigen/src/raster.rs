//! Raster images and grayscale maps.
//!
//! Images are `(3, H, W)` f32 arrays in `[0, 1]`; grayscale maps are
//! `(H, W)` f32 arrays in `[0, 1]`. PNG persistence quantizes to 8 bits, so
//! round-trips are exact within `1/255` per channel.

use crate::error::{DesigenError, Result};
use ndarray::{Array2, Array3};
use std::path::Path;

/// RGB image, channel-first `(3, H, W)`, values in `[0, 1]`.
pub type Rgb = Array3<f32>;
/// Single-channel map `(H, W)`, values in `[0, 1]`.
pub type Gray = Array2<f32>;

pub fn height(img: &Rgb) -> usize {
    img.shape()[1]
}

pub fn width(img: &Rgb) -> usize {
    img.shape()[2]
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(img: &Rgb, path: &Path) -> Result<()> {
    let (h, w) = (height(img), width(img));
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(img[[0, y, x]]),
                quantize(img[[1, y, x]]),
                quantize(img[[2, y, x]]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| DesigenError::io(path.display().to_string(), std::io::Error::other(e)))
}

pub fn load_rgb(path: &Path) -> Result<Rgb> {
    let img = image::open(path)
        .map_err(|e| DesigenError::io(path.display().to_string(), std::io::Error::other(e)))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[[c, y, x]] = px.0[c] as f32 / 255.0;
            }
        }
    }
    Ok(out)
}

pub fn save_gray(map: &Gray, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([quantize(map[[y, x]])]));
        }
    }
    buf.save(path)
        .map_err(|e| DesigenError::io(path.display().to_string(), std::io::Error::other(e)))
}

pub fn load_gray(path: &Path) -> Result<Gray> {
    let img = image::open(path)
        .map_err(|e| DesigenError::io(path.display().to_string(), std::io::Error::other(e)))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = img.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Bilinear resize of an RGB image.
pub fn resize_rgb_bilinear(img: &Rgb, out_h: usize, out_w: usize) -> Rgb {
    let (h, w) = (height(img), width(img));
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let mut out = Array3::zeros((3, out_h, out_w));
    for oy in 0..out_h {
        for ox in 0..out_w {
            // Align pixel centers.
            let sy = ((oy as f32 + 0.5) * h as f32 / out_h as f32 - 0.5).clamp(0.0, h as f32 - 1.0);
            let sx = ((ox as f32 + 0.5) * w as f32 / out_w as f32 - 0.5).clamp(0.0, w as f32 - 1.0);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = sy - y0 as f32;
            let fx = sx - x0 as f32;
            for c in 0..3 {
                let v = img[[c, y0, x0]] * (1.0 - fy) * (1.0 - fx)
                    + img[[c, y0, x1]] * (1.0 - fy) * fx
                    + img[[c, y1, x0]] * fy * (1.0 - fx)
                    + img[[c, y1, x1]] * fy * fx;
                out[[c, oy, ox]] = v;
            }
        }
    }
    out
}

/// PSNR in dB for images in `[0, 1]`. Identical inputs return +inf.
pub fn psnr(a: &Rgb, b: &Rgb) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr: shape mismatch");
    let mut se = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (*x - *y) as f64;
        se += d * d;
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn png_roundtrip_within_quantization() {
        let mut img: Rgb = Array3::zeros((3, 8, 9));
        for (i, v) in img.iter_mut().enumerate() {
            *v = (i % 97) as f32 / 96.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_rgb(&img, &p).unwrap();
        let back = load_rgb(&p).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img: Rgb = Array3::from_elem((3, 6, 6), 0.7);
        let same = resize_rgb_bilinear(&img, 6, 6);
        assert_eq!(img, same);
        let up = resize_rgb_bilinear(&img, 12, 12);
        for v in up.iter() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let img: Rgb = Array3::from_elem((3, 4, 4), 0.25);
        assert!(psnr(&img, &img).is_infinite());
        let mut other = img.clone();
        other[[0, 0, 0]] += 0.1;
        assert!(psnr(&img, &other) > 20.0);
    }
}
