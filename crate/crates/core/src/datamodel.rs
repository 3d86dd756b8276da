//! Plot records, maturity class schemes, manifest ingestion and the
//! stratified train/validation/test split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest and highest relative maturity ratings covered by the class schemes.
pub const RM_MIN: RmRating = RmRating(16);
pub const RM_MAX: RmRating = RmRating(39);

/// A relative maturity rating stored as an integer number of tenths
/// (`1.9` is held as `19`), so bin edges compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RmRating(u16);

impl RmRating {
    pub const fn from_tenths(tenths: u16) -> Self {
        RmRating(tenths)
    }

    /// Rounds `value` to the nearest tenth. Fails if `value` carries more
    /// than one fractional digit or is negative.
    pub fn from_f64(value: f64) -> Result<Self> {
        let scaled = value * 10.0;
        let rounded = scaled.round();
        if !value.is_finite() || rounded < 0.0 || (scaled - rounded).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "rating {value} is not a non-negative value with one fractional digit"
            )));
        }
        Ok(RmRating(rounded as u16))
    }

    pub fn tenths(self) -> u16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    /// Every rating in `[RM_MIN, RM_MAX]` in steps of 0.1.
    pub fn all_in_range() -> impl Iterator<Item = RmRating> {
        (RM_MIN.0..=RM_MAX.0).map(RmRating)
    }

    pub fn in_range(self) -> bool {
        (RM_MIN..=RM_MAX).contains(&self)
    }
}

impl fmt::Display for RmRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl FromStr for RmRating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let value: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("`{s}` is not a number")))?;
        RmRating::from_f64(value)
    }
}

impl Serialize for RmRating {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for RmRating {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        RmRating::from_f64(value).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generation {
    F5,
    F6,
    F7,
}

impl FromStr for Generation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F5" | "f5" => Ok(Generation::F5),
            "F6" | "f6" => Ok(Generation::F6),
            "F7" | "f7" => Ok(Generation::F7),
            other => Err(Error::invalid(format!("unknown generation `{other}`"))),
        }
    }
}

impl fmt::Display for Generation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Generation::F5 => "F5",
            Generation::F6 => "F6",
            Generation::F7 => "F7",
        };
        f.write_str(s)
    }
}

/// One trial plot and its image time series.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRecord {
    pub plot_id: String,
    pub year: i32,
    pub field_id: String,
    pub generation: Generation,
    pub rm_rating: Option<RmRating>,
    /// Metric tons per hectare.
    pub yield_mth: Option<f64>,
    /// Image paths in acquisition order, resolved against the manifest directory.
    pub timepoints: Vec<PathBuf>,
    /// Zero-based indices of timepoints whose image file does not exist.
    pub missing_timepoints: Vec<usize>,
}

impl PlotRecord {
    pub fn is_valid(&self) -> bool {
        self.missing_timepoints.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.rm_rating.is_some_and(RmRating::in_range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeName {
    SevenClass,
    FiveClass,
    FourClassFirst,
    FourClassSecond,
}

impl SchemeName {
    pub const ALL: [SchemeName; 4] = [
        SchemeName::SevenClass,
        SchemeName::FiveClass,
        SchemeName::FourClassFirst,
        SchemeName::FourClassSecond,
    ];

    /// Short lowercase name used on the command line and in output paths.
    pub fn slug(self) -> &'static str {
        match self {
            SchemeName::SevenClass => "seven",
            SchemeName::FiveClass => "five",
            SchemeName::FourClassFirst => "four-first",
            SchemeName::FourClassSecond => "four-second",
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        match key.as_str() {
            "seven" | "7" | "sevenclass" | "seven-class" => Ok(SchemeName::SevenClass),
            "five" | "5" | "fiveclass" | "five-class" => Ok(SchemeName::FiveClass),
            "four-first" | "four1" | "4-first" | "fourclassfirst" => Ok(SchemeName::FourClassFirst),
            "four-second" | "four2" | "4-second" | "fourclasssecond" => {
                Ok(SchemeName::FourClassSecond)
            }
            _ => Err(Error::InvalidScheme(format!(
                "unknown scheme `{s}` (expected seven, five, four-first or four-second)"
            ))),
        }
    }
}

/// Inclusive rating range mapped to one class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeBin {
    pub low: RmRating,
    pub high: RmRating,
    pub label: u8,
}

/// Rating column edges of the maturity binning table, in tenths.
const TABLE_EDGES: [(u16, u16); 8] = [
    (16, 20),
    (21, 23),
    (24, 26),
    (27, 29),
    (30, 32),
    (33, 35),
    (36, 37),
    (38, 39),
];

fn table_labels(name: SchemeName) -> [u8; 8] {
    match name {
        SchemeName::SevenClass => [1, 2, 3, 4, 5, 6, 6, 7],
        SchemeName::FiveClass => [1, 2, 2, 3, 4, 4, 4, 5],
        SchemeName::FourClassFirst => [1, 2, 2, 3, 4, 4, 4, 4],
        SchemeName::FourClassSecond => [1, 2, 2, 3, 3, 4, 4, 4],
    }
}

/// A named mapping from rating ranges to integer class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub name: SchemeName,
    pub bins: Vec<SchemeBin>,
}

impl ClassScheme {
    pub fn new(name: SchemeName) -> Self {
        let bins = TABLE_EDGES
            .iter()
            .zip(table_labels(name))
            .map(|(&(low, high), label)| SchemeBin {
                low: RmRating(low),
                high: RmRating(high),
                label,
            })
            .collect();
        ClassScheme { name, bins }
    }

    /// Builds a scheme from explicit bins, checking that they partition
    /// `[RM_MIN, RM_MAX]` and that labels are contiguous from 1 and
    /// non-decreasing.
    pub fn from_bins(name: SchemeName, bins: Vec<SchemeBin>) -> Result<Self> {
        let scheme = ClassScheme { name, bins };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScheme(msg));
        let Some(first) = self.bins.first() else {
            return bad("no bins".into());
        };
        if first.low != RM_MIN {
            return bad(format!("first bin starts at {}, not {RM_MIN}", first.low));
        }
        if first.label != 1 {
            return bad("labels must start at 1".into());
        }
        for pair in self.bins.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.high.0 + 1 != b.low.0 {
                return bad(format!("gap or overlap between {} and {}", a.high, b.low));
            }
            if b.label < a.label || b.label > a.label + 1 {
                return bad(format!("labels {} -> {} are not contiguous ascending", a.label, b.label));
            }
        }
        if self.bins.iter().any(|b| b.low > b.high) {
            return bad("bin with low > high".into());
        }
        let last = self.bins.last().expect("non-empty");
        if last.high != RM_MAX {
            return bad(format!("last bin ends at {}, not {RM_MAX}", last.high));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.bins.iter().map(|b| b.label).max().unwrap_or(0) as usize
    }

    pub fn labels(&self) -> Vec<u8> {
        (1..=self.num_classes() as u8).collect()
    }

    pub fn assign_label(&self, rating: RmRating) -> Result<u8> {
        self.bins
            .iter()
            .find(|b| (b.low..=b.high).contains(&rating))
            .map(|b| b.label)
            .ok_or_else(|| Error::RatingOutOfRange(rating.to_string()))
    }

    /// All ratings (in tenths steps) that map to `label`.
    pub fn ratings_for_label(&self, label: u8) -> Vec<RmRating> {
        RmRating::all_in_range()
            .filter(|r| self.assign_label(*r).ok() == Some(label))
            .collect()
    }
}

/// Free-function form of [`ClassScheme::assign_label`].
pub fn assign_label(rating: RmRating, scheme: &ClassScheme) -> Result<u8> {
    scheme.assign_label(rating)
}

const FIXED_COLUMNS: [&str; 6] = ["plot_id", "year", "field_id", "generation", "rm_rating", "yield_mth"];

/// Reads a plot manifest CSV. Image paths are resolved relative to the
/// manifest's directory; records whose images are missing are returned with
/// `missing_timepoints` populated rather than dropped.
pub fn load_manifest(path: &Path) -> Result<Vec<PlotRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

/// Parses manifest text; `base` is the directory image paths are relative to.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<PlotRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(*expected) {
            return Err(Error::ManifestRow {
                line: 1,
                column: header.get(i).cloned().unwrap_or_default(),
                message: format!("expected header column `{expected}`"),
            });
        }
    }
    let tp_columns = &header[FIXED_COLUMNS.len()..];
    if tp_columns.is_empty() {
        return Err(Error::ManifestRow {
            line: 1,
            column: String::new(),
            message: "no timepoint columns".into(),
        });
    }
    for (k, name) in tp_columns.iter().enumerate() {
        if *name != format!("tp{}", k + 1) {
            return Err(Error::ManifestRow {
                line: 1,
                column: name.clone(),
                message: format!("expected `tp{}`", k + 1),
            });
        }
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2;
        let row = row?;
        if row.len() != header.len() {
            return Err(Error::ManifestRow {
                line,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let row_err = |i: usize, message: String| Error::ManifestRow {
            line,
            column: header[i].clone(),
            message,
        };

        let plot_id = field(0).to_string();
        if plot_id.is_empty() {
            return Err(row_err(0, "empty plot_id".into()));
        }
        let year = field(1)
            .parse::<i32>()
            .map_err(|_| row_err(1, format!("`{}` is not an integer year", field(1))))?;
        let field_id = field(2).to_string();
        let generation = field(3).parse::<Generation>().map_err(|e| row_err(3, e.to_string()))?;
        let rm_rating = match field(4) {
            "" => None,
            s => {
                let r = s.parse::<RmRating>().map_err(|e| row_err(4, e.to_string()))?;
                if !r.in_range() {
                    return Err(row_err(4, format!("rating {r} outside [{RM_MIN}, {RM_MAX}]")));
                }
                Some(r)
            }
        };
        let yield_mth = match field(5) {
            "" => None,
            s => {
                let y = s
                    .parse::<f64>()
                    .map_err(|_| row_err(5, format!("`{s}` is not a number")))?;
                if !(y >= 0.0 && y.is_finite()) {
                    return Err(row_err(5, format!("yield {y} must be non-negative")));
                }
                Some(y)
            }
        };

        let mut timepoints = Vec::with_capacity(tp_columns.len());
        let mut missing = Vec::new();
        let mut distinct = HashSet::new();
        for k in 0..tp_columns.len() {
            let col = FIXED_COLUMNS.len() + k;
            let rel = field(col);
            if rel.is_empty() {
                return Err(row_err(col, "empty image path".into()));
            }
            if !distinct.insert(rel.to_string()) {
                return Err(row_err(col, format!("image `{rel}` repeated within the row")));
            }
            let resolved = base.join(rel);
            if !resolved.is_file() {
                missing.push(k);
            }
            timepoints.push(resolved);
        }

        if !seen.insert(plot_id.clone()) {
            return Err(Error::DuplicatePlotId(plot_id));
        }
        records.push(PlotRecord {
            plot_id,
            year,
            field_id,
            generation,
            rm_rating,
            yield_mth,
            timepoints,
            missing_timepoints: missing,
        });
    }
    Ok(records)
}

/// Writes records as a manifest. Image paths are written relative to `base`
/// when they live under it.
pub fn write_manifest(path: &Path, records: &[PlotRecord], base: &Path) -> Result<()> {
    let n_tp = records.iter().map(|r| r.timepoints.len()).max().unwrap_or(0);
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{other:?}")),
        })?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_tp).map(|k| format!("tp{k}")));
    writer.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.plot_id.clone(),
            r.year.to_string(),
            r.field_id.clone(),
            r.generation.to_string(),
            r.rm_rating.map(|x| x.to_string()).unwrap_or_default(),
            r.yield_mth.map(|y| format!("{y:.4}")).unwrap_or_default(),
        ];
        for tp in &r.timepoints {
            let rel = tp.strip_prefix(base).unwrap_or(tp);
            row.push(rel.to_string_lossy().replace('\\', "/"));
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Disjoint train/validation/test partition of plot ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Target (val, test) sizes for `n` records: each a floor of 10%.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 10;
    (n - val - test, val, test)
}

/// Distributes `target` items over classes proportionally to `counts` by
/// largest remainder. Classes with at least [`MIN_SPLIT_RECORDS`] members get
/// at least one.
fn allocate(counts: &[usize], total: usize, target: usize) -> Vec<usize> {
    let quota: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 * target as f64 / total as f64)
        .collect();
    let floor_of = |i: usize| {
        let min = usize::from(counts[i] >= MIN_SPLIT_RECORDS);
        (quota[i].floor() as usize).max(min).min(counts[i])
    };
    let mut alloc: Vec<usize> = (0..counts.len()).map(floor_of).collect();
    let mut assigned: usize = alloc.iter().sum();

    // Largest fractional remainder first; ties go to the lower class index.
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quota[a] - alloc[a] as f64;
        let rb = quota[b] - alloc[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while assigned < target {
        let Some(&i) = order.iter().find(|&&i| alloc[i] < counts[i]) else {
            break;
        };
        alloc[i] += 1;
        assigned += 1;
        order.retain(|&j| j != i);
        order.push(i);
    }
    // Minimum-one guarantees can overshoot; take back from the most
    // over-allocated classes.
    while assigned > target {
        let candidate = (0..counts.len())
            .filter(|&i| alloc[i] > usize::from(counts[i] >= MIN_SPLIT_RECORDS))
            .max_by(|&a, &b| {
                let ea = alloc[a] as f64 - quota[a];
                let eb = alloc[b] as f64 - quota[b];
                ea.total_cmp(&eb).then(b.cmp(&a))
            });
        let Some(i) = candidate else { break };
        alloc[i] -= 1;
        assigned -= 1;
    }
    alloc
}

/// Splits labeled records 80/10/10, stratified by class label under `scheme`.
/// Deterministic for a given seed; unlabeled records are ignored.
pub fn split_dataset(records: &[PlotRecord], scheme: &ClassScheme, seed: u64) -> Result<DatasetSplit> {
    let mut by_class: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_labeled()) {
        let label = scheme.assign_label(r.rm_rating.expect("labeled"))?;
        by_class.entry(label).or_default().push(&r.plot_id);
    }
    let n: usize = by_class.values().map(Vec::len).sum();
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::TooFewRecords {
            required: MIN_SPLIT_RECORDS,
            found: n,
        });
    }
    let (_, n_val, n_test) = split_sizes(n);
    let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
    let val_alloc = allocate(&counts, n, n_val);
    let remaining: Vec<usize> = counts.iter().zip(&val_alloc).map(|(c, v)| c - v).collect();
    let test_target_quota = allocate(&counts, n, n_test);
    // Test allocation must fit in what validation left behind.
    let test_alloc: Vec<usize> = test_target_quota
        .iter()
        .zip(&remaining)
        .map(|(&t, &r)| t.min(r))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, ids) in by_class.values_mut().enumerate() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let (val, rest) = ids.split_at(val_alloc[i]);
        let (test, train) = rest.split_at(test_alloc[i]);
        split.val.extend(val.iter().map(|s| s.to_string()));
        split.test.extend(test.iter().map(|s| s.to_string()));
        split.train.extend(train.iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.val.sort();
    split.test.sort();
    Ok(split)
}
