//! Greenness-loss slopes from mean ExG series, per-group slope summaries and
//! slope-vs-yield correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datamodel::{ClassScheme, RmRating, SchemeName};
use crate::error::Result;

/// Mean ExG per timepoint plus the fitted decline between its maximum and
/// the subsequent minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExgSeries {
    pub values: Vec<f64>,
    pub tp_max: usize,
    pub tp_min: usize,
    /// ExG units per timepoint index.
    pub slope: f64,
    pub intercept: f64,
    pub valid: bool,
}

/// Ordinary least squares of `ys` on `xs`; returns (slope, intercept).
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Finds the ExG peak, the first minimum at or after it, and regresses value
/// on timepoint index over that inclusive window. Windows of fewer than two
/// points (or series shorter than three) are flagged invalid.
pub fn extract_slope(values: &[f64]) -> ExgSeries {
    if values.is_empty() {
        return ExgSeries {
            values: Vec::new(),
            tp_max: 0,
            tp_min: 0,
            slope: f64::NAN,
            intercept: f64::NAN,
            valid: false,
        };
    }
    let tp_max = first_argmax(values);
    let mut tp_min = tp_max;
    for (i, &v) in values.iter().enumerate().skip(tp_max) {
        if v < values[tp_min] {
            tp_min = i;
        }
    }
    let window: Vec<f64> = (tp_max..=tp_min).map(|i| i as f64).collect();
    let fit = if values.len() >= 3 {
        least_squares(&window, &values[tp_max..=tp_min])
    } else {
        None
    };
    let (slope, intercept, valid) = match fit {
        Some((s, b)) => (s, b, true),
        None => (f64::NAN, f64::NAN, false),
    };
    ExgSeries {
        values: values.to_vec(),
        tp_max,
        tp_min,
        slope,
        intercept,
        valid,
    }
}

/// One plot's slope with the metadata needed for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeObservation {
    pub plot_id: String,
    pub rating: RmRating,
    pub slope: f64,
    pub yield_mth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSlopeSummary {
    pub group: u8,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single observation.
    pub sd: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn group_by_label<'a>(
    obs: &'a [SlopeObservation],
    scheme: &ClassScheme,
) -> Result<BTreeMap<u8, Vec<&'a SlopeObservation>>> {
    let mut groups: BTreeMap<u8, Vec<&SlopeObservation>> = BTreeMap::new();
    for o in obs.iter().filter(|o| o.slope.is_finite()) {
        groups.entry(scheme.assign_label(o.rating)?).or_default().push(o);
    }
    Ok(groups)
}

/// Mean and standard deviation of slopes per class label; empty groups omitted.
pub fn slope_by_rm_group(obs: &[SlopeObservation], scheme: &ClassScheme) -> Result<Vec<GroupSlopeSummary>> {
    Ok(group_by_label(obs, scheme)?
        .into_iter()
        .map(|(group, members)| {
            let slopes: Vec<f64> = members.iter().map(|o| o.slope).collect();
            let (mean, sd) = mean_sd(&slopes);
            GroupSlopeSummary {
                group,
                n: slopes.len(),
                mean,
                sd,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub scheme: SchemeName,
    pub rm_group: u8,
    /// Observations kept after outlier removal.
    pub n: usize,
    pub n_dropped: usize,
    /// `None` when fewer than 3 observations remain or a variable is constant.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

/// Pearson correlation coefficient; `None` for fewer than two points or a
/// zero-variance variable.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a Pearson r from `n` pairs, via Student's t with
/// `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Single pass: drop points whose yield or slope lies more than three sample
/// standard deviations from the group mean.
fn drop_outliers(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (mx, sx) = mean_sd(&xs);
    let (my, sy) = mean_sd(&ys);
    points
        .iter()
        .copied()
        .filter(|&(x, y)| (x - mx).abs() <= 3.0 * sx && (y - my).abs() <= 3.0 * sy)
        .collect()
}

/// Slope-vs-yield Pearson correlation within each class label.
pub fn slope_yield_correlation(obs: &[SlopeObservation], scheme: &ClassScheme) -> Result<Vec<CorrelationReport>> {
    let mut out = Vec::new();
    for (group, members) in group_by_label(obs, scheme)? {
        let points: Vec<(f64, f64)> = members
            .iter()
            .filter_map(|o| o.yield_mth.map(|y| (o.slope, y)))
            .collect();
        if points.is_empty() {
            continue;
        }
        let kept = drop_outliers(&points);
        let n = kept.len();
        let (r, p_value) = if n < 3 {
            (None, None)
        } else {
            let xs: Vec<f64> = kept.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = kept.iter().map(|p| p.1).collect();
            let r = pearson(&xs, &ys);
            (r, r.and_then(|r| correlation_p_value(r, n)))
        };
        out.push(CorrelationReport {
            scheme: scheme.name,
            rm_group: group,
            n,
            n_dropped: points.len() - n,
            r,
            p_value,
        });
    }
    Ok(out)
}
