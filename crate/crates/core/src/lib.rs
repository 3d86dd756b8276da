//! Maturity phenotyping from UAV plot image time series.
//!
//! Images are reduced to half-degree hue histograms and mean ExG values per
//! acquisition. Stacking the histograms over time gives a contour phenotype
//! that a small convolutional network classifies into relative-maturity
//! classes; the ExG series yields a greenness-loss slope for yield analysis.

pub mod contour;
pub mod datamodel;
pub mod error;
pub mod imageproc;
pub mod learn;
pub mod phenostats;
pub mod pipeline;
pub mod synthgen;

pub use contour::{build_grid, render, ColormapLut, ContourGrid, SubsetMode};
pub use datamodel::{
    assign_label, load_manifest, split_dataset, ClassScheme, DatasetSplit, Generation, PlotRecord, RmRating,
    SchemeName,
};
pub use error::{Error, Result};
pub use imageproc::{hue_histogram, rgb_to_hue, HueHistogram};
pub use phenostats::{extract_slope, slope_yield_correlation, CorrelationReport, ExgSeries};
pub use synthgen::{generate_cohort, CohortSpec, GeneratorConfig};
