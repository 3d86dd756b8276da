//! Batch orchestration over a manifest: per-plot image features, their CSV
//! forms, contour rendering and the ExG slope reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::contour::{build_grid, png_bytes, render, ColormapLut, ContourGrid, SubsetMode, DEFAULT_RENDER_SIZE};
use crate::datamodel::{ClassScheme, PlotRecord};
use crate::error::{Error, Result};
use crate::imageproc::{crop_white_border, hue_histogram, load_rgb, mean_exg, standardize, HueHistogram, HUE_BINS};
use crate::learn::study::{select_timepoints, LabeledPlot};
use crate::phenostats::{extract_slope, slope_by_rm_group, slope_yield_correlation, CorrelationReport, ExgSeries, GroupSlopeSummary, SlopeObservation};

/// Features of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub histogram: HueHistogram,
    /// Mean ExG over the cropped (not resized) image.
    pub mean_exg: f64,
    pub all_white: bool,
}

pub fn process_image(path: &Path) -> Result<ImageFeatures> {
    let cropped = crop_white_border(&load_rgb(path)?);
    let mean_exg = mean_exg(&cropped.image);
    let histogram = hue_histogram(&standardize(&cropped.image));
    Ok(ImageFeatures {
        histogram,
        mean_exg,
        all_white: cropped.all_white,
    })
}

/// Per-timepoint features of one plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFeatures {
    pub plot_id: String,
    pub histograms: Vec<HueHistogram>,
    pub exg: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    /// Sorted by plot id.
    pub plots: Vec<PlotFeatures>,
    /// Plots left out, with the reason.
    pub skipped: Vec<(String, String)>,
    /// Non-fatal per-image notices.
    pub warnings: Vec<String>,
}

/// Processes every plot whose images all exist. Work is spread over the
/// current rayon pool; results come back in plot-id order.
pub fn extract_features(records: &[PlotRecord]) -> Result<Extraction> {
    let mut out = Extraction::default();
    let mut valid = Vec::new();
    for r in records {
        if r.is_valid() {
            valid.push(r);
        } else {
            let tps: Vec<String> = r.missing_timepoints.iter().map(|k| format!("tp{}", k + 1)).collect();
            out.skipped
                .push((r.plot_id.clone(), format!("missing images: {}", tps.join(" "))));
        }
    }
    let processed: Vec<Result<(PlotFeatures, Vec<String>)>> = valid
        .par_iter()
        .map(|r| {
            let mut hist = Vec::with_capacity(r.timepoints.len());
            let mut exg = Vec::with_capacity(r.timepoints.len());
            let mut warnings = Vec::new();
            for (k, path) in r.timepoints.iter().enumerate() {
                let f = process_image(path)?;
                if f.all_white {
                    warnings.push(format!("{} tp{}: image is entirely white", r.plot_id, k + 1));
                }
                hist.push(f.histogram);
                exg.push(f.mean_exg);
            }
            Ok((
                PlotFeatures {
                    plot_id: r.plot_id.clone(),
                    histograms: hist,
                    exg,
                },
                warnings,
            ))
        })
        .collect();
    for p in processed {
        let (plot, warnings) = p?;
        out.plots.push(plot);
        out.warnings.extend(warnings);
    }
    out.plots.sort_by(|a, b| a.plot_id.cmp(&b.plot_id));
    out.skipped.sort();
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `plot_id,tp,bin0..bin179`, timepoints numbered from 1.
pub fn histograms_csv(plots: &[PlotFeatures]) -> String {
    let mut out = String::from("plot_id,tp");
    for b in 0..HUE_BINS {
        let _ = write!(out, ",bin{b}");
    }
    out.push('\n');
    for p in plots {
        for (k, h) in p.histograms.iter().enumerate() {
            let _ = write!(out, "{},{}", p.plot_id, k + 1);
            for c in h.counts() {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
    }
    out
}

/// `plot_id,tp,mean_exg`, timepoints numbered from 1.
pub fn exg_csv(plots: &[PlotFeatures]) -> String {
    let mut out = String::from("plot_id,tp,mean_exg\n");
    for p in plots {
        for (k, v) in p.exg.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", p.plot_id, k + 1, v);
        }
    }
    out
}

pub fn write_features(dir: &Path, plots: &[PlotFeatures]) -> Result<()> {
    write_text(&dir.join("histograms.csv"), &histograms_csv(plots))?;
    write_text(&dir.join("exg.csv"), &exg_csv(plots))
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    })?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

/// Groups `(plot_id, tp, value)` rows by plot, checking that timepoints run
/// 1, 2, ... without gaps.
fn group_rows<T>(path: &Path, rows: Vec<(String, usize, T)>) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (id, tp, v) in rows {
        let series = out.entry(id.clone()).or_default();
        if tp != series.len() + 1 {
            return Err(Error::invalid(format!(
                "{}: plot {id} has timepoint {tp} out of order",
                path.display()
            )));
        }
        series.push(v);
    }
    Ok(out)
}

fn parse_tp(path: &Path, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{}: bad timepoint `{s}`", path.display())))
}

pub fn read_histograms(path: &Path) -> Result<BTreeMap<String, Vec<HueHistogram>>> {
    let (header, rows) = read_rows(path)?;
    if header.len() != HUE_BINS + 2 || header[0] != "plot_id" || header[1] != "tp" {
        return Err(Error::invalid(format!("{}: not a histogram table", path.display())));
    }
    let parsed = rows
        .iter()
        .map(|r| {
            let counts = (2..HUE_BINS + 2)
                .map(|i| {
                    r[i].trim()
                        .parse::<u64>()
                        .map_err(|_| Error::invalid(format!("{}: bad count `{}`", path.display(), &r[i])))
                })
                .collect::<Result<Vec<u64>>>()?;
            Ok((r[0].to_string(), parse_tp(path, &r[1])?, HueHistogram::from_counts(counts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    group_rows(path, parsed)
}

pub fn read_exg(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let (header, rows) = read_rows(path)?;
    if header != ["plot_id", "tp", "mean_exg"] {
        return Err(Error::invalid(format!("{}: not an ExG table", path.display())));
    }
    let parsed = rows
        .iter()
        .map(|r| {
            let v = r[2]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("{}: bad ExG `{}`", path.display(), &r[2])))?;
            Ok((r[0].to_string(), parse_tp(path, &r[1])?, v))
        })
        .collect::<Result<Vec<_>>>()?;
    group_rows(path, parsed)
}

/// Reloads what [`write_features`] wrote.
pub fn read_features(dir: &Path) -> Result<Vec<PlotFeatures>> {
    let hist = read_histograms(&dir.join("histograms.csv"))?;
    let mut exg = read_exg(&dir.join("exg.csv"))?;
    hist.into_iter()
        .map(|(plot_id, histograms)| {
            let exg = exg
                .remove(&plot_id)
                .ok_or_else(|| Error::invalid(format!("no ExG rows for plot {plot_id}")))?;
            Ok(PlotFeatures {
                plot_id,
                histograms,
                exg,
            })
        })
        .collect()
}

/// Joins features with manifest labels; unlabeled plots are left out.
pub fn labeled_plots(records: &[PlotRecord], plots: &[PlotFeatures], scheme: &ClassScheme) -> Result<Vec<LabeledPlot>> {
    let by_id: BTreeMap<&str, &PlotRecord> = records.iter().map(|r| (r.plot_id.as_str(), r)).collect();
    let mut out = Vec::new();
    for p in plots {
        let Some(rec) = by_id.get(p.plot_id.as_str()) else {
            continue;
        };
        if let Some(rating) = rec.rm_rating.filter(|_| rec.is_labeled()) {
            out.push(LabeledPlot {
                plot_id: p.plot_id.clone(),
                label: scheme.assign_label(rating)?,
                histograms: p.histograms.clone(),
            });
        }
    }
    Ok(out)
}

/// One rendered contour phenotype.
#[derive(Debug, Clone)]
pub struct EncodedPlot {
    pub plot_id: String,
    pub grid: ContourGrid,
    pub png: Vec<u8>,
    pub discarded_fraction: f64,
    pub all_zero: bool,
}

pub fn encode_plot(plot: &PlotFeatures, mode: SubsetMode, lut: &ColormapLut) -> Result<EncodedPlot> {
    let built = build_grid(&select_timepoints(mode, &plot.histograms)?)?;
    let rendered = render(&built.grid, lut, DEFAULT_RENDER_SIZE)?;
    Ok(EncodedPlot {
        plot_id: plot.plot_id.clone(),
        png: png_bytes(&rendered.image)?,
        grid: built.grid,
        discarded_fraction: built.discarded_fraction,
        all_zero: rendered.all_zero,
    })
}

/// Renders every plot to `<dir>/<plot_id>.png`, optionally with the grid as
/// `<plot_id>.grid.csv`. Returns the encodings in plot-id order.
pub fn encode_all(
    plots: &[PlotFeatures],
    mode: SubsetMode,
    lut: &ColormapLut,
    dir: &Path,
    write_grids: bool,
) -> Result<Vec<EncodedPlot>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tps: Vec<usize> = if mode == SubsetMode::All8 {
        Vec::new()
    } else {
        mode.indices().to_vec()
    };
    plots
        .par_iter()
        .map(|p| {
            let e = encode_plot(p, mode, lut)?;
            let png_path = dir.join(format!("{}.png", p.plot_id));
            fs::write(&png_path, &e.png).map_err(|err| Error::io(&png_path, err))?;
            if write_grids {
                let rows: Vec<usize> = if tps.is_empty() {
                    (1..=e.grid.rows()).collect()
                } else {
                    tps.clone()
                };
                write_text(&dir.join(format!("{}.grid.csv", p.plot_id)), &e.grid.to_csv(&rows))?;
            }
            Ok(e)
        })
        .collect()
}

/// Where contour images for a scheme and subset live under `root`.
pub fn contour_dir(root: &Path, scheme: &ClassScheme, mode: SubsetMode) -> PathBuf {
    root.join("contours").join(scheme.name.slug()).join(mode.slug())
}

/// Slope extraction for every plot that has a rating.
pub fn slope_observations(records: &[PlotRecord], plots: &[PlotFeatures]) -> (Vec<(String, ExgSeries)>, Vec<SlopeObservation>) {
    let by_id: BTreeMap<&str, &PlotRecord> = records.iter().map(|r| (r.plot_id.as_str(), r)).collect();
    let mut series = Vec::with_capacity(plots.len());
    let mut obs = Vec::new();
    for p in plots {
        let s = extract_slope(&p.exg);
        if let Some(rec) = by_id.get(p.plot_id.as_str()) {
            if let (Some(rating), true) = (rec.rm_rating, s.valid) {
                obs.push(SlopeObservation {
                    plot_id: p.plot_id.clone(),
                    rating,
                    slope: s.slope,
                    yield_mth: rec.yield_mth,
                });
            }
        }
        series.push((p.plot_id.clone(), s));
    }
    (series, obs)
}

/// `plot_id,tp_max,tp_min,slope,valid`; timepoints numbered from 1.
pub fn slope_report_csv(series: &[(String, ExgSeries)]) -> String {
    let mut out = String::from("plot_id,tp_max,tp_min,slope,valid\n");
    for (id, s) in series {
        let slope = if s.valid { s.slope.to_string() } else { String::new() };
        let _ = writeln!(out, "{id},{},{},{slope},{}", s.tp_max + 1, s.tp_min + 1, s.valid);
    }
    out
}

pub fn group_summary_csv(groups: &[GroupSlopeSummary]) -> String {
    let mut out = String::from("group,n,mean_slope,sd_slope\n");
    for g in groups {
        let _ = writeln!(out, "{},{},{},{}", g.group, g.n, g.mean, g.sd);
    }
    out
}

/// `scheme,group,n,r,p`; undefined statistics are left empty.
pub fn correlation_report_csv(reports: &[CorrelationReport]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("scheme,group,n,r,p\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scheme.slug(),
            r.rm_group,
            r.n,
            opt(r.r),
            opt(r.p_value)
        );
    }
    out
}

/// Everything the analysis step produces.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub series: Vec<(String, ExgSeries)>,
    pub groups: Vec<GroupSlopeSummary>,
    /// `None` when no plot carries a yield.
    pub correlations: Option<Vec<CorrelationReport>>,
}

pub fn analyze(records: &[PlotRecord], plots: &[PlotFeatures], scheme: &ClassScheme) -> Result<Analysis> {
    let (series, obs) = slope_observations(records, plots);
    let groups = slope_by_rm_group(&obs, scheme)?;
    let correlations = if obs.iter().any(|o| o.yield_mth.is_some()) {
        Some(slope_yield_correlation(&obs, scheme)?)
    } else {
        None
    };
    Ok(Analysis {
        series,
        groups,
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(id: &str, t: usize) -> PlotFeatures {
        PlotFeatures {
            plot_id: id.into(),
            histograms: (0..t)
                .map(|k| {
                    let mut c = vec![0u64; HUE_BINS];
                    c[60 - 5 * k] = 100 + k as u64;
                    c[150] = 3;
                    HueHistogram::from_counts(c).unwrap()
                })
                .collect(),
            exg: (0..t).map(|k| 50.0 - 3.5 * k as f64).collect(),
        }
    }

    #[test]
    fn feature_tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plots = vec![plot("A1", 8), plot("B2", 8)];
        write_features(dir.path(), &plots).unwrap();
        assert_eq!(read_features(dir.path()).unwrap(), plots);
    }

    #[test]
    fn gaps_in_timepoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exg.csv");
        fs::write(&path, "plot_id,tp,mean_exg\nA,1,3\nA,3,2\n").unwrap();
        assert!(read_exg(&path).is_err());
    }

    #[test]
    fn distributed3_grid_has_three_rows() {
        let e = encode_plot(&plot("A", 8), SubsetMode::Distributed3, &ColormapLut::batlow()).unwrap();
        assert_eq!(e.grid.rows(), 3);
        assert_eq!(e.grid.get(0, 60), 100);
        assert_eq!(e.grid.get(1, 45), 103);
        assert_eq!(e.grid.get(2, 25), 107);
    }

    #[test]
    fn slope_report_lists_every_plot() {
        let (series, _) = slope_observations(&[], &[plot("A", 8), plot("B", 2)]);
        let csv = slope_report_csv(&series);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "A,1,8,-3.5,true");
        assert_eq!(lines[2], "B,1,2,,false");
    }
}
