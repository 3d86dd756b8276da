//! The hue contour phenotype: per-timepoint hue histograms stacked into a
//! time x hue count grid, rendered through a perceptually uniform colormap.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageproc::{bilinear_taps, HueHistogram, HUE_BINS};

/// Hue bins kept in the grid: 0 through 100 inclusive.
pub const GRID_COLS: usize = 101;

pub const DEFAULT_RENDER_SIZE: (u32, u32) = (256, 256);

const BATLOW_CSV: &str = include_str!("../data/batlow.csv");

/// Row-major `rows x GRID_COLS` pixel counts, earliest timepoint first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourGrid {
    rows: usize,
    counts: Vec<u64>,
}

impl ContourGrid {
    pub fn from_counts(rows: usize, counts: Vec<u64>) -> Result<Self> {
        if rows == 0 || counts.len() != rows * GRID_COLS {
            return Err(Error::invalid(format!(
                "grid of {rows} rows needs {} counts, got {}",
                rows * GRID_COLS,
                counts.len()
            )));
        }
        Ok(ContourGrid { rows, counts })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        GRID_COLS
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, t: usize) -> &[u64] {
        &self.counts[t * GRID_COLS..(t + 1) * GRID_COLS]
    }

    pub fn get(&self, t: usize, hue: usize) -> u64 {
        self.counts[t * GRID_COLS + hue]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Counts divided by the grid's global maximum. All zeros when the grid
    /// is empty.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.max();
        if max == 0 {
            return vec![0.0; self.counts.len()];
        }
        let m = max as f64;
        self.counts.iter().map(|&c| c as f64 / m).collect()
    }

    /// Scales every count by an integer factor.
    pub fn scaled(&self, factor: u64) -> ContourGrid {
        ContourGrid {
            rows: self.rows,
            counts: self.counts.iter().map(|c| c * factor).collect(),
        }
    }

    /// CSV with header `tp,bin0..bin100`; `tp` is the original 1-based
    /// acquisition index.
    pub fn to_csv(&self, timepoint_indices: &[usize]) -> String {
        let mut out = String::from("tp");
        for b in 0..GRID_COLS {
            out.push_str(&format!(",bin{b}"));
        }
        out.push('\n');
        for t in 0..self.rows {
            let tp = timepoint_indices.get(t).copied().unwrap_or(t + 1);
            out.push_str(&tp.to_string());
            for c in self.row(t) {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Result of [`build_grid`]: the grid plus the mass cropped away above hue 100.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBuild {
    pub grid: ContourGrid,
    pub discarded: u64,
    pub discarded_fraction: f64,
}

/// Stacks histograms (chronological) into a grid, keeping hue bins 0..=100.
pub fn build_grid(histograms: &[HueHistogram]) -> Result<GridBuild> {
    if histograms.is_empty() {
        return Err(Error::invalid("no histograms to assemble"));
    }
    if histograms.len() < 2 {
        return Err(Error::invalid("a contour grid needs at least 2 timepoints"));
    }
    let mut counts = Vec::with_capacity(histograms.len() * GRID_COLS);
    let mut discarded = 0u64;
    let mut total = 0u64;
    for h in histograms {
        if h.counts().len() != HUE_BINS {
            return Err(Error::invalid(format!(
                "histogram has {} bins, expected {HUE_BINS}",
                h.counts().len()
            )));
        }
        counts.extend_from_slice(&h.counts()[..GRID_COLS]);
        discarded += h.counts()[GRID_COLS..].iter().sum::<u64>();
        total += h.total_pixels();
    }
    let grid = ContourGrid {
        rows: histograms.len(),
        counts,
    };
    let discarded_fraction = if total == 0 {
        0.0
    } else {
        discarded as f64 / total as f64
    };
    Ok(GridBuild {
        grid,
        discarded,
        discarded_fraction,
    })
}

/// 256-entry colormap lookup table, strictly increasing in luma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColormapLut {
    entries: Vec<[u8; 3]>,
}

/// Integer Rec. 601 luma scaled by 1000.
fn luma(c: [u8; 3]) -> u32 {
    299 * u32::from(c[0]) + 587 * u32::from(c[1]) + 114 * u32::from(c[2])
}

impl ColormapLut {
    pub fn new(entries: Vec<[u8; 3]>) -> Result<Self> {
        if entries.len() != 256 {
            return Err(Error::InvalidColormap(format!("expected 256 entries, got {}", entries.len())));
        }
        for (i, pair) in entries.windows(2).enumerate() {
            if luma(pair[1]) <= luma(pair[0]) {
                return Err(Error::InvalidColormap(format!(
                    "luma not strictly increasing between entries {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(ColormapLut { entries })
    }

    /// The bundled Batlow map.
    pub fn batlow() -> Self {
        Self::from_csv(BATLOW_CSV).expect("bundled colormap is valid")
    }

    /// Parses 256 lines of `index,r,g,b`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::with_capacity(256);
        for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<u16>()
                    .map_err(|_| Error::InvalidColormap(format!("line {}: bad value `{s}`", n + 1)))
            };
            if fields.len() != 4 {
                return Err(Error::InvalidColormap(format!("line {}: expected index,r,g,b", n + 1)));
            }
            if parse(fields[0])? as usize != n {
                return Err(Error::InvalidColormap(format!("line {}: index out of order", n + 1)));
            }
            let mut rgb = [0u8; 3];
            for (slot, f) in rgb.iter_mut().zip(&fields[1..]) {
                let v = parse(f)?;
                *slot = u8::try_from(v)
                    .map_err(|_| Error::InvalidColormap(format!("line {}: {v} > 255", n + 1)))?;
            }
            entries.push(rgb);
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{i},{},{},{}\n", c[0], c[1], c[2]))
            .collect()
    }

    pub fn get(&self, index: u8) -> [u8; 3] {
        self.entries[index as usize]
    }

    /// Colour for a value in `[0, 1]`: entry `floor(v * 255)`.
    pub fn map(&self, v: f64) -> [u8; 3] {
        let idx = (v.clamp(0.0, 1.0) * 255.0).floor() as usize;
        self.entries[idx.min(255)]
    }
}

impl Default for ColormapLut {
    fn default() -> Self {
        Self::batlow()
    }
}

/// Bilinear resample of a row-major `rows x cols` field to `out_h x out_w`.
pub fn resample_field(values: &[f64], rows: usize, cols: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let xt = bilinear_taps(cols, out_w);
    let yt = bilinear_taps(rows, out_h);
    let mut out = Vec::with_capacity(out_h * out_w);
    for ty in &yt {
        let r0 = &values[ty.lo * cols..(ty.lo + 1) * cols];
        let r1 = &values[ty.hi * cols..(ty.hi + 1) * cols];
        for tx in &xt {
            let top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.frac;
            let bottom = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.frac;
            out.push(top + (bottom - top) * ty.frac);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: RgbImage,
    /// Set when the grid had no counts and the image is uniformly `lut[0]`.
    pub all_zero: bool,
}

/// Renders a grid as an RGB heatmap of `out_size` (width, height).
///
/// Counts are divided by the grid's global maximum, upsampled bilinearly and
/// then stretched so the brightest interpolated pixel reaches the top of the
/// colormap. Hue runs left to right, time top to bottom.
pub fn render(grid: &ContourGrid, lut: &ColormapLut, out_size: (u32, u32)) -> Result<Rendered> {
    let (w, h) = out_size;
    if w == 0 || h == 0 {
        return Err(Error::invalid("render size must be non-zero"));
    }
    if grid.max() == 0 {
        let c = lut.get(0);
        return Ok(Rendered {
            image: RgbImage::from_pixel(w, h, image::Rgb(c)),
            all_zero: true,
        });
    }
    let field = resample_field(&grid.normalized(), grid.rows(), GRID_COLS, h as usize, w as usize);
    let peak = field.iter().copied().fold(0.0f64, f64::max);
    let mut raw = Vec::with_capacity(field.len() * 3);
    for v in field {
        raw.extend_from_slice(&lut.map(v / peak));
    }
    Ok(Rendered {
        image: RgbImage::from_raw(w, h, raw).expect("buffer sized to dimensions"),
        all_zero: false,
    })
}

/// Which acquisitions of an 8-image series feed a contour phenotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubsetMode {
    All8,
    Distributed6,
    Distributed4,
    Distributed3,
    Last6,
    Last4,
    Last3,
}

impl SubsetMode {
    pub const ALL: [SubsetMode; 7] = [
        SubsetMode::All8,
        SubsetMode::Distributed6,
        SubsetMode::Distributed4,
        SubsetMode::Distributed3,
        SubsetMode::Last6,
        SubsetMode::Last4,
        SubsetMode::Last3,
    ];

    /// 1-based acquisition indices.
    pub fn indices(self) -> &'static [usize] {
        match self {
            SubsetMode::All8 => &[1, 2, 3, 4, 5, 6, 7, 8],
            SubsetMode::Distributed6 => &[1, 2, 4, 5, 7, 8],
            SubsetMode::Distributed4 => &[1, 3, 5, 7],
            SubsetMode::Distributed3 => &[1, 4, 8],
            SubsetMode::Last6 => &[3, 4, 5, 6, 7, 8],
            SubsetMode::Last4 => &[5, 6, 7, 8],
            SubsetMode::Last3 => &[6, 7, 8],
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            SubsetMode::All8 => "all8",
            SubsetMode::Distributed6 => "distributed6",
            SubsetMode::Distributed4 => "distributed4",
            SubsetMode::Distributed3 => "distributed3",
            SubsetMode::Last6 => "last6",
            SubsetMode::Last4 => "last4",
            SubsetMode::Last3 => "last3",
        }
    }

    /// Row label in the subset comparison table.
    pub fn table_label(self) -> &'static str {
        match self {
            SubsetMode::All8 => "8 images",
            SubsetMode::Distributed6 => "6 images",
            SubsetMode::Distributed4 => "4 images",
            SubsetMode::Distributed3 => "3 images",
            SubsetMode::Last6 => "6 last images",
            SubsetMode::Last4 => "4 last images",
            SubsetMode::Last3 => "3 last images",
        }
    }
}

impl fmt::Display for SubsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for SubsetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        SubsetMode::ALL
            .into_iter()
            .find(|m| m.slug() == key)
            .ok_or_else(|| Error::invalid(format!("unknown subset mode `{s}`")))
    }
}

/// Picks the timepoints of `mode` out of exactly 8 chronological items.
pub fn temporal_subset<T: Clone>(mode: SubsetMode, items: &[T]) -> Result<Vec<T>> {
    if items.len() != 8 {
        return Err(Error::invalid(format!(
            "temporal subsets need exactly 8 timepoints, got {}",
            items.len()
        )));
    }
    Ok(mode.indices().iter().map(|&i| items[i - 1].clone()).collect())
}

/// A plot's phenotype: the grid, the acquisitions it came from, and its render.
#[derive(Debug, Clone)]
pub struct ContourPhenotype {
    pub grid: ContourGrid,
    pub timepoint_indices: Vec<usize>,
    pub rendered: RgbImage,
}

impl ContourPhenotype {
    pub fn build(
        histograms: &[HueHistogram],
        timepoint_indices: Vec<usize>,
        lut: &ColormapLut,
        out_size: (u32, u32),
    ) -> Result<Self> {
        let built = build_grid(histograms)?;
        let rendered = render(&built.grid, lut, out_size)?.image;
        Ok(ContourPhenotype {
            grid: built.grid,
            timepoint_indices,
            rendered,
        })
    }
}

/// Encodes a raster as PNG bytes.
pub fn png_bytes(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(buf.into_inner())
}
