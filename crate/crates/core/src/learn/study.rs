//! End-to-end training runs over plots with known labels, including the
//! comparison of temporal subsets.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Model;
use super::eval::{evaluate, EvalReport};
use super::features::{grid_features, FeatureVector};
use super::hierarchy::{seven_class_groups, train_hierarchical, HierarchyCurves};
use super::smote::smote_balance;
use super::train::{train, HyperParams, TrainingCurve};
use crate::contour::{build_grid, temporal_subset, SubsetMode};
use crate::datamodel::{ClassScheme, DatasetSplit, SchemeName};
use crate::error::{Error, Result};
use crate::imageproc::HueHistogram;

/// A plot's per-timepoint histograms and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPlot {
    pub plot_id: String,
    pub label: u8,
    pub histograms: Vec<HueHistogram>,
}

/// The histograms a subset mode keeps. `All8` accepts any sequence length;
/// the other modes need exactly eight timepoints.
pub fn select_timepoints(mode: SubsetMode, histograms: &[HueHistogram]) -> Result<Vec<HueHistogram>> {
    if mode == SubsetMode::All8 && histograms.len() != 8 {
        return Ok(histograms.to_vec());
    }
    temporal_subset(mode, histograms)
}

pub fn plot_features(plot: &LabeledPlot, mode: SubsetMode) -> Result<FeatureVector> {
    let grid = build_grid(&select_timepoints(mode, &plot.histograms)?)?.grid;
    Ok(FeatureVector::new(grid_features(&grid), plot.label))
}

#[derive(Debug, Clone, Default)]
pub struct SplitFeatures {
    pub train: Vec<FeatureVector>,
    pub val: Vec<FeatureVector>,
    pub test: Vec<FeatureVector>,
}

/// Features for every plot named by `split`, in split order.
pub fn split_features(plots: &[LabeledPlot], split: &DatasetSplit, mode: SubsetMode) -> Result<SplitFeatures> {
    let by_id: HashMap<&str, &LabeledPlot> = plots.iter().map(|p| (p.plot_id.as_str(), p)).collect();
    let part = |ids: &[String]| -> Result<Vec<FeatureVector>> {
        ids.par_iter()
            .map(|id| {
                let p = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::invalid(format!("split names unknown plot {id}")))?;
                plot_features(p, mode)
            })
            .collect()
    };
    Ok(SplitFeatures {
        train: part(&split.train)?,
        val: part(&split.val)?,
        test: part(&split.test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub hyper: HyperParams,
    /// Neighbour count for oversampling; `None` trains on the raw class mix.
    pub smote_k: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: HyperParams::default(),
            smote_k: Some(super::smote::DEFAULT_K_NEIGHBORS),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Curves {
    Flat(TrainingCurve),
    Hierarchical(HierarchyCurves),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: SubsetMode,
    pub model: Model,
    pub curves: Curves,
    /// Evaluated on the original (not oversampled) training plots.
    pub train_report: EvalReport,
    pub test_report: EvalReport,
    pub train_samples: usize,
    pub synthetic_samples: usize,
}

/// Trains and evaluates one model on precomputed features.
pub fn run_on_features(
    features: &SplitFeatures,
    scheme: &ClassScheme,
    mode: SubsetMode,
    config: &RunConfig,
    hierarchical: bool,
) -> Result<RunResult> {
    let (train_set, synthetic) = match config.smote_k {
        Some(k) => {
            let out = smote_balance(&features.train, k, config.seed)?;
            let synthetic = out.samples.len() - out.original_count;
            (out.samples, synthetic)
        }
        None => (features.train.clone(), 0),
    };
    let (model, curves) = if hierarchical {
        if scheme.name != SchemeName::SevenClass {
            return Err(Error::invalid("the hierarchical model is defined for the seven-class scheme"));
        }
        let (m, c) = train_hierarchical(
            &train_set,
            &features.val,
            scheme,
            seven_class_groups(),
            &config.hyper,
            config.seed,
        )?;
        (Model::Hierarchical(m), Curves::Hierarchical(c))
    } else {
        let (m, c) = train(&train_set, &features.val, scheme, &config.hyper, config.seed)?;
        (Model::Flat(m), Curves::Flat(c))
    };
    let train_report = evaluate(model.classifier(), &features.train, scheme)?;
    let test_report = evaluate(model.classifier(), &features.test, scheme)?;
    Ok(RunResult {
        mode,
        model,
        curves,
        train_report,
        test_report,
        train_samples: train_set.len(),
        synthetic_samples: synthetic,
    })
}

/// Extracts features for `mode`, then trains and evaluates.
pub fn run_mode(
    plots: &[LabeledPlot],
    split: &DatasetSplit,
    scheme: &ClassScheme,
    mode: SubsetMode,
    config: &RunConfig,
    hierarchical: bool,
) -> Result<RunResult> {
    let features = split_features(plots, split, mode)?;
    run_on_features(&features, scheme, mode, config, hierarchical)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub mode: SubsetMode,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Trains one flat model per mode on the same split and seed.
pub fn subset_study(
    plots: &[LabeledPlot],
    split: &DatasetSplit,
    scheme: &ClassScheme,
    modes: &[SubsetMode],
    config: &RunConfig,
) -> Result<Vec<SubsetRow>> {
    modes
        .iter()
        .map(|&mode| {
            let r = run_mode(plots, split, scheme, mode, config, false)?;
            Ok(SubsetRow {
                mode,
                train_acc: r.train_report.accuracy,
                test_acc: r.test_report.accuracy,
            })
        })
        .collect()
}

/// `timepoints,mode,train_acc,test_acc`, one row per mode.
pub fn study_csv(rows: &[SubsetRow]) -> String {
    let mut out = String::from("timepoints,mode,train_acc,test_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4}",
            r.mode.table_label(),
            r.mode.slug(),
            r.train_acc,
            r.test_acc
        );
    }
    out
}
