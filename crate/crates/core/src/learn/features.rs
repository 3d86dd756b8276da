//! Classifier inputs derived from contour grids.

use serde::{Deserialize, Serialize};

use crate::contour::{resample_field, ContourGrid, GRID_COLS};

/// Rows (time) of the classifier input raster.
pub const FEATURE_HEIGHT: usize = 32;
/// Columns (hue) of the classifier input raster.
pub const FEATURE_WIDTH: usize = 64;

/// A flattened grayscale raster in `[0, 1]` with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: u8,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, label: u8) -> Self {
        FeatureVector { values, label }
    }
}

/// Normalizes a grid by its global maximum and resamples it bilinearly to
/// `FEATURE_HEIGHT x FEATURE_WIDTH`.
pub fn grid_features(grid: &ContourGrid) -> Vec<f64> {
    resample_field(&grid.normalized(), grid.rows(), GRID_COLS, FEATURE_HEIGHT, FEATURE_WIDTH)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}
