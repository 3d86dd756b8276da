//! Fixtures shared by the benchmarks.

use huecontour::contour::GRID_COLS;
use huecontour::datamodel::RmRating;
use huecontour::learn::features::{FEATURE_HEIGHT, FEATURE_WIDTH};
use huecontour::learn::FeatureVector;
use huecontour::synthgen::{profile_for_rating, render_plot_image};
use huecontour::{ContourGrid, GeneratorConfig};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic plot image at the given (0-based) timepoint.
pub fn plot_image(tp: usize, size: (u32, u32)) -> RgbImage {
    let config = GeneratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let profile = profile_for_rating(RmRating::from_tenths(27), &config, &mut rng);
    render_plot_image(&profile, &config, tp, size, &mut rng)
}

/// An 8-row grid with a diagonal ridge, like a senescing plot.
pub fn ridge_grid() -> ContourGrid {
    let mut counts = vec![0u64; 8 * GRID_COLS];
    for t in 0..8 {
        let centre: usize = 85 - 8 * t;
        for c in centre.saturating_sub(6)..(centre + 6).min(GRID_COLS) {
            counts[t * GRID_COLS + c] = 1000 - 60 * c.abs_diff(centre) as u64;
        }
    }
    ContourGrid::from_counts(8, counts).expect("sized to 8 rows")
}

/// Random feature rasters with labels cycling over `classes`.
pub fn random_features(n: usize, classes: u8, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let values = (0..FEATURE_HEIGHT * FEATURE_WIDTH).map(|_| rng.random::<f64>()).collect();
            FeatureVector::new(values, (i % usize::from(classes)) as u8 + 1)
        })
        .collect()
}
