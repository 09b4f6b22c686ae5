//! Conversions between 8-bit images and planar `f64` maps, plus bilinear resampling.

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};

/// Planar `(3, h, w)` copy of an RGB image with values in `[0, 255]`.
pub fn rgb_to_planar(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    let mut out = Array3::<f64>::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = p.0[c] as f64;
        }
    }
    out
}

/// Rounds and saturates a planar `(3, h, w)` map back to 8-bit RGB.
pub fn planar_to_rgb(map: &Array3<f64>) -> RgbImage {
    let (_, h, w) = map.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| map[[c, y as usize, x as usize]].round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Probability map to 8-bit grayscale with value `round(255 p)`.
pub fn prob_to_gray(map: &Array2<f64>) -> GrayImage {
    let (h, w) = map.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(map[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn gray_to_prob(img: &GrayImage) -> Array2<f64> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
    })
}

/// Source coordinate and blend weight for output index `dst` (half-pixel centers).
fn taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let ratio = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize of every plane of a `(c, h, w)` map to `(c, out_h, out_w)`.
///
/// Uses half-pixel centers, so a same-size resize is the identity.
pub fn resize_bilinear(map: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = map.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "empty resize");
    let ys: Vec<_> = (0..out_h).map(|y| taps(y, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, w, out_w)).collect();
    let mut out = Array3::<f64>::zeros((c, out_h, out_w));
    for ci in 0..c {
        let plane = map.index_axis(ndarray::Axis(0), ci);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
                let bottom = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
                out[[ci, oy, ox]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub fn resize_map(map: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    let planar = map.view().into_shape_with_order((1, h, w)).expect("contiguous").to_owned();
    resize_bilinear(&planar, out_h, out_w)
        .into_shape_with_order((out_h, out_w))
        .expect("reshape")
}

pub fn resize_rgb(img: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    if img.dimensions() == (out_w, out_h) {
        return img.clone();
    }
    planar_to_rgb(&resize_bilinear(&rgb_to_planar(img), out_h as usize, out_w as usize))
}
