//! Training-time augmentation: colour jitter and random rectangular masks.
//! Geometric transforms are deliberately absent; both image axes carry
//! meaning (hue and time).

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageproc::{hsv_unit_to_rgb, rgb_to_hsv_unit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of a full hue turn.
    pub hue_shift: f64,
    pub mask_count: usize,
    /// Mask (width, height) in pixels.
    pub mask_size: (usize, usize),
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue_shift: 0.0,
            mask_count: 0,
            mask_size: (0, 0),
        }
    }

    /// Jitter strengths of the reference setup, without masking.
    pub fn reference_jitter() -> Self {
        AugmentParams {
            brightness: 0.0,
            contrast: 0.1,
            saturation: 0.2,
            hue_shift: 0.1,
            ..Self::identity()
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let p = [self.brightness, self.contrast, self.saturation, self.hue_shift];
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("augmentation strengths must be non-negative"));
        }
        if self.mask_count > 0 && (self.mask_size.0 > width || self.mask_size.1 > height) {
            return Err(Error::invalid(format!(
                "mask {}x{} larger than image {width}x{height}",
                self.mask_size.0, self.mask_size.1
            )));
        }
        Ok(())
    }
}

fn factor(rng: &mut ChaCha8Rng, strength: f64) -> Option<f64> {
    (strength > 0.0).then(|| (1.0 + rng.random_range(-strength..=strength)).max(0.0))
}

fn mask_origins(rng: &mut ChaCha8Rng, p: &AugmentParams, width: usize, height: usize) -> Vec<(usize, usize)> {
    (0..p.mask_count)
        .map(|_| {
            let x = rng.random_range(0..=width - p.mask_size.0);
            let y = rng.random_range(0..=height - p.mask_size.1);
            (x, y)
        })
        .collect()
}

/// Augments an RGB raster.
pub fn augment_rgb(image: &RgbImage, params: &AugmentParams, seed: u64) -> Result<RgbImage> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    params.validate(w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brightness = factor(&mut rng, params.brightness);
    let contrast = factor(&mut rng, params.contrast);
    let saturation = factor(&mut rng, params.saturation);
    let hue = (params.hue_shift > 0.0).then(|| rng.random_range(-params.hue_shift..=params.hue_shift));

    let mut px: Vec<[f64; 3]> = image
        .pixels()
        .map(|p| p.0.map(|c| f64::from(c) / 255.0))
        .collect();
    let gray = |c: &[f64; 3]| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    let clamp = |c: [f64; 3]| c.map(|v| v.clamp(0.0, 1.0));

    let jittered = brightness.is_some() || contrast.is_some() || saturation.is_some() || hue.is_some();
    if let Some(f) = brightness {
        px.iter_mut().for_each(|c| *c = clamp(c.map(|v| v * f)));
    }
    if let Some(f) = contrast {
        let mean = px.iter().map(gray).sum::<f64>() / px.len().max(1) as f64;
        px.iter_mut().for_each(|c| *c = clamp(c.map(|v| f * v + (1.0 - f) * mean)));
    }
    if let Some(f) = saturation {
        px.iter_mut().for_each(|c| {
            let g = gray(c);
            *c = clamp(c.map(|v| f * v + (1.0 - f) * g));
        });
    }
    if let Some(shift) = hue {
        px.iter_mut().for_each(|c| {
            let (hh, s, v) = rgb_to_hsv_unit(c[0], c[1], c[2]);
            let (r, g, b) = hsv_unit_to_rgb(hh + shift, s, v);
            *c = clamp([r, g, b]);
        });
    }

    let mut out = if jittered {
        let raw: Vec<u8> = px
            .iter()
            .flat_map(|c| c.map(|v| (v * 255.0).round() as u8))
            .collect();
        RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to dimensions")
    } else {
        image.clone()
    };
    for (x0, y0) in mask_origins(&mut rng, params, w, h) {
        for y in y0..y0 + params.mask_size.1 {
            for x in x0..x0 + params.mask_size.0 {
                out.put_pixel(x as u32, y as u32, image::Rgb([0, 0, 0]));
            }
        }
    }
    Ok(out)
}

/// Augments a row-major grayscale raster in `[0, 1]`. Saturation and hue
/// jitter have no effect on a single channel.
pub fn augment_gray(values: &[f64], width: usize, height: usize, params: &AugmentParams, seed: u64) -> Result<Vec<f64>> {
    if values.len() != width * height {
        return Err(Error::invalid("raster length does not match its dimensions"));
    }
    params.validate(width, height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brightness = factor(&mut rng, params.brightness);
    let contrast = factor(&mut rng, params.contrast);
    // keep the random stream aligned with the RGB path
    let _ = factor(&mut rng, params.saturation);
    if params.hue_shift > 0.0 {
        let _: f64 = rng.random_range(-params.hue_shift..=params.hue_shift);
    }

    let mut out = values.to_vec();
    if let Some(f) = brightness {
        out.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
    }
    if let Some(f) = contrast {
        let mean = out.iter().sum::<f64>() / out.len().max(1) as f64;
        out.iter_mut().for_each(|v| *v = (f * *v + (1.0 - f) * mean).clamp(0.0, 1.0));
    }
    for (x0, y0) in mask_origins(&mut rng, params, width, height) {
        for y in y0..y0 + params.mask_size.1 {
            out[y * width + x0..y * width + x0 + params.mask_size.0].fill(0.0);
        }
    }
    Ok(out)
}
