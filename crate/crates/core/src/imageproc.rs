//! Per-image preprocessing and features: white-border cropping, resizing to
//! the standard plot raster, half-degree hue, hue histograms and mean ExG.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hue bins in the half-degree convention, `[0, 180)`.
pub const HUE_BINS: usize = 180;

/// Channel value at or above which a pixel counts as white padding.
pub const WHITE_THRESHOLD: u8 = 250;

pub const STANDARD_WIDTH: u32 = 300;
pub const STANDARD_HEIGHT: u32 = 1000;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

#[derive(Debug, Clone)]
pub struct Cropped {
    pub image: RgbImage,
    /// Set when the input had no non-white pixel and was returned unchanged.
    pub all_white: bool,
}

fn is_white(p: &Rgb<u8>) -> bool {
    p.0.iter().all(|&c| c >= WHITE_THRESHOLD)
}

/// Crops to the bounding box of non-white pixels.
pub fn crop_white_border(image: &RgbImage) -> Cropped {
    let (w, h) = image.dimensions();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (x, y, p) in image.enumerate_pixels() {
        if !is_white(p) {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    if x0 == u32::MAX {
        return Cropped {
            image: image.clone(),
            all_white: true,
        };
    }
    if x0 == 0 && y0 == 0 && x1 == w - 1 && y1 == h - 1 {
        return Cropped {
            image: image.clone(),
            all_white: false,
        };
    }
    let view = image::imageops::crop_imm(image, x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    Cropped {
        image: view.to_image(),
        all_white: false,
    }
}

/// An RGB raster guaranteed to be [`STANDARD_WIDTH`] x [`STANDARD_HEIGHT`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage(RgbImage);

impl PreprocessedImage {
    pub fn new(image: RgbImage) -> Result<Self> {
        if image.dimensions() != (STANDARD_WIDTH, STANDARD_HEIGHT) {
            return Err(Error::invalid(format!(
                "preprocessed image must be {STANDARD_WIDTH}x{STANDARD_HEIGHT}, got {:?}",
                image.dimensions()
            )));
        }
        Ok(PreprocessedImage(image))
    }

    pub fn image(&self) -> &RgbImage {
        &self.0
    }

    pub fn into_inner(self) -> RgbImage {
        self.0
    }
}

/// Source coordinate taps for one output axis of a half-pixel-centred
/// bilinear resample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn bilinear_taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap { lo, hi, frac: s - lo as f64 }
        })
        .collect()
}

/// Bilinear resize of an RGB raster.
pub fn resize_bilinear(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = image.dimensions();
    if (sw, sh) == (width, height) {
        return image.clone();
    }
    let xt = bilinear_taps(sw as usize, width as usize);
    let yt = bilinear_taps(sh as usize, height as usize);
    let src = image.as_raw();
    let stride = sw as usize * 3;
    let mut out = Vec::with_capacity(width as usize * height as usize * 3);
    for ty in &yt {
        let r0 = &src[ty.lo * stride..(ty.lo + 1) * stride];
        let r1 = &src[ty.hi * stride..(ty.hi + 1) * stride];
        for tx in &xt {
            for c in 0..3 {
                let a = f64::from(r0[tx.lo * 3 + c]);
                let b = f64::from(r0[tx.hi * 3 + c]);
                let top = a + (b - a) * tx.frac;
                let a = f64::from(r1[tx.lo * 3 + c]);
                let b = f64::from(r1[tx.hi * 3 + c]);
                let bottom = a + (b - a) * tx.frac;
                let v = top + (bottom - top) * ty.frac;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(width, height, out).expect("buffer sized to dimensions")
}

fn transpose(image: &RgbImage) -> RgbImage {
    let (w, h) = image.dimensions();
    RgbImage::from_fn(h, w, |x, y| *image.get_pixel(y, x))
}

/// Resizes to the standard 300x1000 raster. Landscape inputs are transposed
/// first so the longer side always lands on the 1000-pixel axis.
pub fn standardize(image: &RgbImage) -> PreprocessedImage {
    let (w, h) = image.dimensions();
    let upright = if w > h { transpose(image) } else { image.clone() };
    PreprocessedImage(resize_bilinear(&upright, STANDARD_WIDTH, STANDARD_HEIGHT))
}

/// Half-degree hue of an 8-bit RGB pixel, truncated to an integer bin.
/// Achromatic pixels map to 0.
pub fn rgb_to_hue(r: u8, g: u8, b: u8) -> u8 {
    let (r, g, b) = (i32::from(r), i32::from(g), i32::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0 {
        return 0;
    }
    // hue/2 = 30 * sector offset in exact integer arithmetic.
    let num = if max == r {
        30 * (g - b) + 180 * d
    } else if max == g {
        30 * (b - r) + 60 * d
    } else {
        30 * (r - g) + 120 * d
    };
    (num.div_euclid(d) % 180) as u8
}

/// Pixel counts per half-degree hue bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HueHistogram {
    counts: Vec<u64>,
    total_pixels: u64,
}

impl HueHistogram {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.len() != HUE_BINS {
            return Err(Error::invalid(format!(
                "hue histogram needs {HUE_BINS} bins, got {}",
                counts.len()
            )));
        }
        let total_pixels = counts.iter().sum();
        Ok(HueHistogram { counts, total_pixels })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_pixels(&self) -> u64 {
        self.total_pixels
    }

    /// Count-weighted mean hue bin.
    pub fn mean_hue(&self) -> f64 {
        let weighted: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(h, &c)| h as f64 * c as f64)
            .sum();
        weighted / self.total_pixels.max(1) as f64
    }
}

/// Histogram of a standardized image; every pixel is counted.
pub fn hue_histogram(image: &PreprocessedImage) -> HueHistogram {
    hue_histogram_of(image.image())
}

/// Histogram of any raster.
pub fn hue_histogram_of(image: &RgbImage) -> HueHistogram {
    let mut counts = vec![0u64; HUE_BINS];
    for p in image.as_raw().chunks_exact(3) {
        counts[rgb_to_hue(p[0], p[1], p[2]) as usize] += 1;
    }
    HueHistogram {
        counts,
        total_pixels: u64::from(image.width()) * u64::from(image.height()),
    }
}

/// Excess greenness `2G - R - B` of one pixel.
pub fn exg(r: u8, g: u8, b: u8) -> i32 {
    2 * i32::from(g) - i32::from(r) - i32::from(b)
}

/// Mean per-pixel ExG over the whole raster.
pub fn mean_exg(image: &RgbImage) -> f64 {
    let n = u64::from(image.width()) * u64::from(image.height());
    if n == 0 {
        return 0.0;
    }
    let sum: i64 = image
        .as_raw()
        .chunks_exact(3)
        .map(|p| i64::from(exg(p[0], p[1], p[2])))
        .sum();
    sum as f64 / n as f64
}

/// Converts half-degree hue plus saturation/value in `[0, 1]` to RGB.
pub fn hsv_to_rgb(hue_half_deg: f64, saturation: f64, value: f64) -> [u8; 3] {
    let h = (hue_half_deg * 2.0).rem_euclid(360.0) / 60.0;
    let s = saturation.clamp(0.0, 1.0);
    let v = value.clamp(0.0, 1.0);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Float HSV (hue in `[0, 1)` of a full turn) of an RGB pixel.
pub(crate) fn rgb_to_hsv_unit(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let v = max;
    let s = if max > 0.0 { d / max } else { 0.0 };
    if d == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, s, v)
}

pub(crate) fn hsv_unit_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32, p: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(p))
    }

    #[test]
    fn hue_reference_values() {
        assert_eq!(rgb_to_hue(0, 255, 0), 60);
        assert_eq!(rgb_to_hue(255, 255, 0), 30);
        assert_eq!(rgb_to_hue(128, 128, 128), 0);
        assert_eq!(rgb_to_hue(255, 0, 0), 0);
        assert_eq!(rgb_to_hue(0, 0, 255), 120);
        assert_eq!(rgb_to_hue(255, 0, 1), 179);
    }

    #[test]
    fn hue_matches_float_formula() {
        for r in (0..=255).step_by(17) {
            for g in (0..=255).step_by(15) {
                for b in (0..=255).step_by(51) {
                    let (h, s, _) = rgb_to_hsv_unit(r as f64, g as f64, b as f64);
                    let expected = if s == 0.0 { 0 } else { ((h * 180.0) + 1e-9).floor() as u8 % 180 };
                    assert_eq!(rgb_to_hue(r, g, b), expected, "({r},{g},{b})");
                }
            }
        }
    }

    #[test]
    fn crop_all_white_is_flagged() {
        let img = solid(10, 10, [255, 255, 255]);
        let out = crop_white_border(&img);
        assert!(out.all_white);
        assert_eq!(out.image, img);
    }

    #[test]
    fn crop_single_pixel() {
        let mut img = solid(10, 10, [255, 255, 255]);
        img.put_pixel(4, 4, Rgb([200, 0, 0]));
        let out = crop_white_border(&img);
        assert!(!out.all_white);
        assert_eq!(out.image.dimensions(), (1, 1));
        assert_eq!(out.image.get_pixel(0, 0), &Rgb([200, 0, 0]));
    }

    #[test]
    fn crop_removes_frame() {
        let interior = RgbImage::from_fn(6, 9, |x, y| Rgb([(x * 20) as u8, (y * 20) as u8, 90]));
        let mut framed = solid(10, 13, [255, 255, 255]);
        image::imageops::replace(&mut framed, &interior, 2, 2);
        let out = crop_white_border(&framed);
        assert_eq!(out.image, interior);
    }

    #[test]
    fn near_white_counts_as_white() {
        let mut img = solid(5, 5, [251, 250, 255]);
        img.put_pixel(1, 2, Rgb([249, 255, 255]));
        assert_eq!(crop_white_border(&img).image.dimensions(), (1, 1));
    }

    #[test]
    fn standardize_identity_and_constant() {
        let img = RgbImage::from_fn(300, 1000, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        assert_eq!(standardize(&img).image(), &img);

        let c = solid(150, 500, [30, 140, 60]);
        let out = standardize(&c);
        assert!(out.image().pixels().all(|p| p.0 == [30, 140, 60]));
    }

    #[test]
    fn standardize_transposes_landscape() {
        let img = RgbImage::from_fn(1000, 300, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 0]));
        let out = standardize(&img);
        assert_eq!(out.image().dimensions(), (300, 1000));
        assert_eq!(out.image(), &transpose(&img));
    }

    #[test]
    fn histogram_counts_every_pixel() {
        let green = standardize(&solid(300, 1000, [0, 255, 0]));
        let h = hue_histogram(&green);
        assert_eq!(h.counts()[60], 300_000);
        assert_eq!(h.total_pixels(), 300_000);

        let mut half = solid(300, 1000, [0, 255, 0]);
        for y in 500..1000 {
            for x in 0..300 {
                half.put_pixel(x, y, Rgb([255, 255, 0]));
            }
        }
        let h = hue_histogram(&PreprocessedImage::new(half).unwrap());
        assert_eq!(h.counts()[60], 150_000);
        assert_eq!(h.counts()[30], 150_000);
        assert_eq!(h.counts().iter().sum::<u64>(), h.total_pixels());
    }

    #[test]
    fn histogram_rejects_wrong_bin_count() {
        assert!(HueHistogram::from_counts(vec![0; 179]).is_err());
    }

    #[test]
    fn exg_reference_values() {
        assert_eq!(mean_exg(&solid(4, 4, [100, 150, 50])), 150.0);
        assert_eq!(mean_exg(&solid(4, 4, [77, 77, 77])), 0.0);
        assert_eq!(mean_exg(&solid(4, 4, [0, 255, 0])), 510.0);
        assert_eq!(mean_exg(&solid(4, 4, [255, 0, 255])), -510.0);
    }

    #[test]
    fn hsv_round_trip_hits_intended_bin() {
        for h in [20.0, 35.0, 60.0, 85.0] {
            let [r, g, b] = hsv_to_rgb(h + 0.5, 0.7, 0.7);
            assert_eq!(f64::from(rgb_to_hue(r, g, b)), h);
        }
    }
}
