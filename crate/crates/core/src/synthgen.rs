//! Synthetic plot cohorts with known maturity, senescence dynamics and yield.
//!
//! Each plot follows a piecewise-linear hue trajectory: flat at `hue_green`
//! until `onset_tp`, then falling at `decline_rate` hue units per timepoint
//! until `hue_brown`, then flat. Canopy pixels jitter around the trajectory;
//! background pixels have a fixed soil colour and a white frame surrounds the
//! plot.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_manifest, ClassScheme, Generation, PlotRecord, RmRating, SchemeName, RM_MAX, RM_MIN};
use crate::error::{Error, Result};
use crate::imageproc::hsv_to_rgb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub hue_green: u8,
    pub hue_yellow: u8,
    pub hue_brown: u8,
    /// Onset timepoint (0-based, fractional) at the earliest rating.
    pub onset_first: f64,
    /// Onset timepoint at the latest rating.
    pub onset_last: f64,
    /// Mean decline rate (hue units per timepoint, negative) at the earliest rating.
    pub decline_rate_early: f64,
    /// Mean decline rate at the latest rating.
    pub decline_rate_late: f64,
    pub decline_rate_sd: f64,
    /// Per-pixel Gaussian hue jitter (hue units).
    pub noise_sd: f64,
    pub saturation: f64,
    pub value: f64,
    /// Per-pixel saturation/value jitter.
    pub sv_jitter: f64,
    /// Fractional value loss once the canopy passes from yellow to brown.
    pub brown_dimming: f64,
    /// Fraction of plot columns covered by canopy; the rest is soil.
    pub canopy_fraction: f64,
    pub soil_rgb: [u8; 3],
    pub border_px: u32,
    pub yield_base: f64,
    /// Yield change per class label step.
    pub yield_label_step: f64,
    /// Yield gained per hue unit/timepoint of steeper decline (`k >= 0`).
    pub yield_k: f64,
    pub yield_noise_sd: f64,
    pub year: i32,
    pub field_id: String,
    pub generation: Generation,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            hue_green: 85,
            hue_yellow: 35,
            hue_brown: 20,
            onset_first: 0.0,
            onset_last: 4.0,
            decline_rate_early: -9.0,
            decline_rate_late: -11.0,
            decline_rate_sd: 0.1,
            noise_sd: 2.0,
            saturation: 0.65,
            value: 0.6,
            sv_jitter: 0.03,
            brown_dimming: 0.25,
            canopy_fraction: 0.8,
            soil_rgb: [120, 104, 88],
            border_px: 2,
            yield_base: 4.5,
            yield_label_step: 0.15,
            yield_k: 0.0,
            yield_noise_sd: 0.3,
            year: 2023,
            field_id: "SYN".into(),
            generation: Generation::F6,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hue_green > self.hue_yellow && self.hue_yellow > self.hue_brown && self.hue_green < 180) {
            return Err(Error::invalid("hues must satisfy green > yellow > brown, all < 180"));
        }
        if self.onset_last <= self.onset_first {
            return Err(Error::invalid("onset_last must exceed onset_first"));
        }
        if self.decline_rate_early >= 0.0 || self.decline_rate_late >= 0.0 {
            return Err(Error::invalid("decline rates must be negative"));
        }
        if self.noise_sd < 0.0 || self.decline_rate_sd < 0.0 || self.sv_jitter < 0.0 || self.yield_noise_sd < 0.0 {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        if self.yield_k < 0.0 {
            return Err(Error::invalid("yield_k must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.canopy_fraction) {
            return Err(Error::invalid("canopy_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    fn rating_position(rating: RmRating) -> f64 {
        f64::from(rating.tenths() - RM_MIN.tenths()) / f64::from(RM_MAX.tenths() - RM_MIN.tenths())
    }

    pub fn onset_for(&self, rating: RmRating) -> f64 {
        self.onset_first + (self.onset_last - self.onset_first) * Self::rating_position(rating)
    }

    pub fn mean_decline_rate(&self, rating: RmRating) -> f64 {
        self.decline_rate_early + (self.decline_rate_late - self.decline_rate_early) * Self::rating_position(rating)
    }
}

/// Senescence dynamics of one plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenescenceProfile {
    pub rm_rating: RmRating,
    pub onset_tp: f64,
    /// Hue units per timepoint, negative.
    pub decline_rate: f64,
    pub hue_green: u8,
    pub hue_yellow: u8,
    pub hue_brown: u8,
    pub noise_sd: f64,
}

impl SenescenceProfile {
    /// Trajectory hue at (0-based, fractional) timepoint `t`.
    pub fn hue_at(&self, t: f64) -> f64 {
        let green = f64::from(self.hue_green);
        let brown = f64::from(self.hue_brown);
        if t <= self.onset_tp {
            return green;
        }
        (green + self.decline_rate * (t - self.onset_tp)).max(brown)
    }
}

/// Profile for a rating: onset is linear (strictly increasing) in the
/// rating; the decline rate is drawn around a rating-dependent mean.
pub fn profile_for_rating<R: Rng + ?Sized>(rating: RmRating, config: &GeneratorConfig, rng: &mut R) -> SenescenceProfile {
    let mean = config.mean_decline_rate(rating);
    let decline_rate = if config.decline_rate_sd > 0.0 {
        let d = Normal::new(mean, config.decline_rate_sd).expect("finite sd");
        d.sample(rng).min(-0.5)
    } else {
        mean
    };
    SenescenceProfile {
        rm_rating: rating,
        onset_tp: config.onset_for(rating),
        decline_rate,
        hue_green: config.hue_green,
        hue_yellow: config.hue_yellow,
        hue_brown: config.hue_brown,
        noise_sd: config.noise_sd,
    }
}

/// Renders one plot image at timepoint `tp` (0-based).
pub fn render_plot_image<R: Rng + ?Sized>(
    profile: &SenescenceProfile,
    config: &GeneratorConfig,
    tp: usize,
    size: (u32, u32),
    rng: &mut R,
) -> RgbImage {
    let (w, h) = size;
    let hue = profile.hue_at(tp as f64);
    let yellow = f64::from(profile.hue_yellow);
    let brown = f64::from(profile.hue_brown);
    let browning = ((yellow - hue) / (yellow - brown)).clamp(0.0, 1.0);
    let value = config.value * (1.0 - config.brown_dimming * browning);

    let hue_noise = (profile.noise_sd > 0.0).then(|| Normal::new(0.0, profile.noise_sd).expect("finite sd"));
    let sv_noise = (config.sv_jitter > 0.0).then(|| Normal::new(0.0, config.sv_jitter).expect("finite sd"));

    let b = config.border_px;
    let inner_w = w.saturating_sub(2 * b);
    let canopy_w = (f64::from(inner_w) * config.canopy_fraction).round() as u32;
    let canopy_x0 = b + (inner_w - canopy_w) / 2;
    let canopy_x1 = canopy_x0 + canopy_w;

    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for y in b..h.saturating_sub(b) {
        for x in b..w.saturating_sub(b) {
            let px = if (canopy_x0..canopy_x1).contains(&x) {
                let dh = hue_noise.map_or(0.0, |d| d.sample(rng));
                let (ds, dv) = match sv_noise {
                    Some(d) => (d.sample(rng), d.sample(rng)),
                    None => (0.0, 0.0),
                };
                hsv_to_rgb(hue + dh, config.saturation + ds, value + dv)
            } else {
                config.soil_rgb
            };
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

/// Everything needed to generate a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_plots: usize,
    pub scheme: SchemeName,
    pub timepoints: usize,
    pub seed: u64,
    pub image_size: (u32, u32),
    pub generator: GeneratorConfig,
}

/// Ground truth kept alongside each generated plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPlot {
    pub plot_id: String,
    pub label: u8,
    pub profile: SenescenceProfile,
    pub yield_mth: f64,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<PlotRecord>,
    pub truth: Vec<GeneratedPlot>,
    pub manifest_path: PathBuf,
}

pub fn plot_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Draws the rating, profile and yield of plot `index`. Plots cycle through
/// the scheme's classes so each class gets an equal share.
pub fn draw_plot(spec: &CohortSpec, scheme: &ClassScheme, index: usize) -> (GeneratedPlot, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(plot_seed(spec.seed, index));
    let k = scheme.num_classes();
    let label = (index % k) as u8 + 1;
    let ratings = scheme.ratings_for_label(label);
    let rating = ratings[rng.random_range(0..ratings.len())];
    let profile = profile_for_rating(rating, &spec.generator, &mut rng);
    let g = &spec.generator;
    let noise = if g.yield_noise_sd > 0.0 {
        Normal::new(0.0, g.yield_noise_sd).expect("finite sd").sample(&mut rng)
    } else {
        0.0
    };
    // Steeper (more negative) decline means higher yield when k > 0.
    let yield_mth = (g.yield_base + g.yield_label_step * f64::from(label - 1) - g.yield_k * profile.decline_rate
        + noise)
        .max(0.0);
    let plot = GeneratedPlot {
        plot_id: format!("SYN_{:05}", index + 1),
        label,
        profile,
        yield_mth,
    };
    (plot, rng)
}

/// Generates the cohort under `out_dir`: `images/`, `manifest.csv` and
/// `generator_config.json`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<Cohort> {
    if spec.image_size.0 == 0 || spec.image_size.1 == 0 {
        return Err(Error::invalid("image_size must have non-zero width and height"));
    }
    if spec.n_plots == 0 {
        return Err(Error::invalid("n_plots must be at least 1"));
    }
    if spec.timepoints < 3 {
        return Err(Error::invalid("timepoints must be at least 3"));
    }
    let b = spec.generator.border_px;
    if spec.image_size.0 <= 2 * b || spec.image_size.1 <= 2 * b {
        return Err(Error::invalid("image_size leaves no room inside the border"));
    }
    spec.generator.validate()?;
    let scheme = ClassScheme::new(spec.scheme);

    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let results: Vec<Result<(GeneratedPlot, PlotRecord)>> = (0..spec.n_plots)
        .into_par_iter()
        .map(|i| {
            let (plot, mut rng) = draw_plot(spec, &scheme, i);
            let mut timepoints = Vec::with_capacity(spec.timepoints);
            for tp in 0..spec.timepoints {
                let img = render_plot_image(&plot.profile, &spec.generator, tp, spec.image_size, &mut rng);
                let path = images_dir.join(format!("{}_tp{}.png", plot.plot_id, tp + 1));
                img.save(&path).map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
                timepoints.push(path);
            }
            let record = PlotRecord {
                plot_id: plot.plot_id.clone(),
                year: spec.generator.year,
                field_id: spec.generator.field_id.clone(),
                generation: spec.generator.generation,
                rm_rating: Some(plot.profile.rm_rating),
                yield_mth: Some(plot.yield_mth),
                timepoints,
                missing_timepoints: Vec::new(),
            };
            Ok((plot, record))
        })
        .collect();

    let mut truth = Vec::with_capacity(spec.n_plots);
    let mut records = Vec::with_capacity(spec.n_plots);
    for r in results {
        let (p, rec) = r?;
        truth.push(p);
        records.push(rec);
    }

    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &records, out_dir)?;
    let cfg_path = out_dir.join("generator_config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&cfg_path, e))?;
    let truth_path = out_dir.join("ground_truth.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&truth)?).map_err(|e| Error::io(&truth_path, e))?;

    Ok(Cohort {
        records,
        truth,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(t: u16) -> RmRating {
        RmRating::from_tenths(t)
    }

    #[test]
    fn onset_strictly_increases_with_rating() {
        let cfg = GeneratorConfig::default();
        let onsets: Vec<f64> = RmRating::all_in_range().map(|r| cfg.onset_for(r)).collect();
        assert!(onsets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn profile_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = profile_for_rating(rating(25), &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = profile_for_rating(rating(25), &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn early_onset_plot_is_browner_late() {
        let base = SenescenceProfile {
            rm_rating: rating(16),
            onset_tp: 2.0,
            decline_rate: -10.0,
            hue_green: 85,
            hue_yellow: 35,
            hue_brown: 20,
            noise_sd: 0.0,
        };
        let late = SenescenceProfile {
            rm_rating: rating(39),
            onset_tp: 6.0,
            ..base.clone()
        };
        // tp8 of the early plot vs tp6 of the late plot (0-based 7 and 5)
        assert_eq!(base.hue_at(7.0), 35.0);
        assert_eq!(late.hue_at(5.0), 85.0);
        assert!(base.hue_at(7.0) < late.hue_at(5.0));
    }

    #[test]
    fn trajectory_non_increasing() {
        let cfg = GeneratorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for r in RmRating::all_in_range() {
            let p = profile_for_rating(r, &cfg, &mut rng);
            let hues: Vec<f64> = (0..8).map(|t| p.hue_at(t as f64)).collect();
            assert!(hues.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn noise_free_images_are_identical() {
        let cfg = GeneratorConfig {
            noise_sd: 0.0,
            sv_jitter: 0.0,
            ..Default::default()
        };
        let p = profile_for_rating(rating(30), &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let a = render_plot_image(&p, &cfg, 4, (20, 60), &mut ChaCha8Rng::seed_from_u64(5));
        let b = render_plot_image(&p, &cfg, 4, (20, 60), &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let bad = GeneratorConfig {
            hue_yellow: 90,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        GeneratorConfig::default().validate().unwrap();
    }
}
