//! Dataset ingestion: IDX and delimited-text loaders, min/max normalization and
//! 8-bit quantization, dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of quantization levels used throughout (8-bit).
pub const LEVELS: usize = 256;

/// Real-valued features with integer labels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub num_features: usize,
    pub values: Vec<f32>,
    pub labels: Vec<u32>,
}

impl RawDataset {
    pub fn new(num_features: usize, values: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Config("dataset needs at least one feature".into()));
        }
        Error::check_dim(labels.len() * num_features, values.len())?;
        Ok(RawDataset {
            num_features,
            values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        let mut values = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        RawDataset {
            num_features: self.num_features,
            values,
            labels,
        }
    }
}

/// Per-feature (min, max) observed on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormParams {
    pub fn fit(raw: &RawDataset) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Config("cannot fit normalization on an empty split".into()));
        }
        let n = raw.num_features;
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for i in 0..raw.len() {
            for (j, &x) in raw.row(i).iter().enumerate() {
                let x = x as f64;
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        if min.iter().chain(&max).any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite feature value in training split".into()));
        }
        Ok(NormParams { min, max })
    }

    /// `round(255 (x - min) / (max - min))` clamped to the level range;
    /// constant features map to level 0.
    #[inline]
    pub fn level(&self, feature: usize, x: f64) -> u8 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi <= lo {
            return 0;
        }
        let top = (LEVELS - 1) as f64;
        (top * (x - lo) / (hi - lo)).round().clamp(0.0, top) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Samples of `num_features` levels in `0..num_levels` with labels in
/// `0..num_classes`, stored row-major as bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedDataset {
    num_features: usize,
    num_levels: usize,
    num_classes: usize,
    levels: Vec<u8>,
    labels: Vec<u32>,
    pub split: Split,
    pub norm: Option<NormParams>,
}

impl QuantizedDataset {
    pub fn new(
        num_features: usize,
        num_levels: usize,
        num_classes: usize,
        levels: Vec<u8>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Config("dataset needs at least one feature".into()));
        }
        if !(2..=LEVELS).contains(&num_levels) {
            return Err(Error::Config(format!(
                "level count must be in 2..={LEVELS}, got {num_levels}"
            )));
        }
        Error::check_dim(labels.len() * num_features, levels.len())?;
        if let Some(&l) = levels.iter().find(|&&l| l as usize >= num_levels) {
            return Err(Error::LevelOutOfRange {
                level: l as usize,
                levels: num_levels,
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: y as usize,
                classes: num_classes,
            });
        }
        Ok(QuantizedDataset {
            num_features,
            num_levels,
            num_classes,
            levels,
            labels,
            split: Split::Train,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[u8] {
        &self.levels[i * self.num_features..(i + 1) * self.num_features]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], usize)> + '_ {
        self.levels
            .chunks_exact(self.num_features)
            .zip(self.labels.iter().map(|&y| y as usize))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }

    /// Histogram of level occurrences over every feature of every sample.
    pub fn level_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.num_levels];
        for &l in &self.levels {
            hist[l as usize] += 1;
        }
        hist
    }

    pub fn subset(&self, indices: &[usize]) -> QuantizedDataset {
        let mut levels = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            levels.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        QuantizedDataset {
            levels,
            labels,
            norm: self.norm.clone(),
            ..*self
        }
    }

    /// Coarsens levels to `levels` bins: `l * levels / num_levels`.
    pub fn with_levels(&self, levels: usize) -> QuantizedDataset {
        assert!((2..=self.num_levels).contains(&levels));
        QuantizedDataset {
            levels: self
                .levels
                .iter()
                .map(|&l| (l as usize * levels / self.num_levels) as u8)
                .collect(),
            labels: self.labels.clone(),
            num_levels: levels,
            norm: self.norm.clone(),
            ..*self
        }
    }

    /// Seeded stratified split: `fraction` of each class goes to the second part.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> (QuantizedDataset, QuantizedDataset) {
        let (a, b) = stratified_indices(&self.labels, self.num_classes, fraction, seed);
        (self.subset(&a), self.subset(&b))
    }
}

/// Stratified index split: per class, `round(fraction * count)` indices (chosen
/// by a seeded shuffle) go to the second list. Both lists are sorted.
pub fn stratified_indices(
    labels: &[u32],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for k in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == k).collect();
        idx.shuffle(&mut rng);
        let take = (fraction * idx.len() as f64).round() as usize;
        second.extend_from_slice(&idx[..take]);
        first.extend_from_slice(&idx[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Normalizes and quantizes a raw split. Without `norm`, min/max are fitted on
/// `raw` itself (which must then be the training split).
pub fn quantize(raw: &RawDataset, norm: Option<&NormParams>, num_classes: usize) -> Result<QuantizedDataset> {
    let fitted;
    let norm = match norm {
        Some(n) => {
            Error::check_dim(raw.num_features, n.min.len())?;
            n
        }
        None => {
            fitted = NormParams::fit(raw)?;
            &fitted
        }
    };
    let nf = raw.num_features;
    let levels = raw
        .values
        .iter()
        .enumerate()
        .map(|(idx, &x)| norm.level(idx % nf, x as f64))
        .collect();
    let mut q = QuantizedDataset::new(nf, LEVELS, num_classes, levels, raw.labels.clone())?;
    q.norm = Some(norm.clone());
    Ok(q)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Reads an IDX image/label file pair (uncompressed, big-endian header).
/// Images are flattened row-major into `rows * cols` features.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let img = read_file(images)?;
    check_len(images, &img, 4)?;
    let magic = be_u32(&img, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    check_len(images, &img, 16)?;
    let count = be_u32(&img, 4) as usize;
    let features = be_u32(&img, 8) as usize * be_u32(&img, 12) as usize;
    check_len(images, &img, 16 + count * features)?;

    let lab = read_file(labels)?;
    check_len(labels, &lab, 4)?;
    let magic = be_u32(&lab, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    check_len(labels, &lab, 8)?;
    let label_count = be_u32(&lab, 4) as usize;
    check_len(labels, &lab, 8 + label_count)?;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let values = img[16..16 + count * features].iter().map(|&p| p as f32).collect();
    let labels = lab[8..8 + count].iter().map(|&y| y as u32).collect();
    RawDataset::new(features, values, labels)
}

/// Writes an IDX pair; used for fixtures and dataset conversion.
pub fn write_idx(images: &Path, labels: &Path, rows: usize, cols: usize, pixels: &[u8], ys: &[u8]) -> Result<()> {
    Error::check_dim(ys.len() * rows * cols, pixels.len())?;
    let mut img = Vec::with_capacity(16 + pixels.len());
    for x in [IDX_IMAGES_MAGIC, ys.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&x.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    fs::write(images, img).map_err(|e| Error::io(images, e))?;
    let mut lab = Vec::with_capacity(8 + ys.len());
    for x in [IDX_LABELS_MAGIC, ys.len() as u32] {
        lab.extend_from_slice(&x.to_be_bytes());
    }
    lab.extend_from_slice(ys);
    fs::write(labels, lab).map_err(|e| Error::io(labels, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delimiter {
    Char(char),
    Named(NamedDelimiter),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedDelimiter {
    Whitespace,
}

impl Default for Delimiter {
    fn default() -> Self {
        Delimiter::Char(',')
    }
}

/// Column layout of a delimited text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextSchema {
    #[serde(default)]
    pub delimiter: Delimiter,
    /// Leading lines to skip.
    #[serde(default)]
    pub header_rows: usize,
    /// Column holding the label; negative counts from the end. Ignored when
    /// labels come from a separate file.
    #[serde(default = "default_label_column")]
    pub label_column: i64,
    /// Columns excluded from the feature vector (same indexing as `label_column`).
    #[serde(default)]
    pub drop_columns: Vec<i64>,
    /// Explicit label text to class index mapping; takes precedence over `label_offset`.
    #[serde(default)]
    pub label_map: Option<std::collections::BTreeMap<String, u32>>,
    /// Numeric labels are parsed as reals and shifted down by this offset.
    #[serde(default)]
    pub label_offset: i64,
    /// Cell texts treated as missing values.
    #[serde(default)]
    pub missing: Vec<String>,
    /// Drop rows containing a missing cell instead of failing.
    #[serde(default)]
    pub skip_missing_rows: bool,
}

fn default_label_column() -> i64 {
    -1
}

impl Default for TextSchema {
    fn default() -> Self {
        TextSchema {
            delimiter: Delimiter::default(),
            header_rows: 0,
            label_column: -1,
            drop_columns: Vec::new(),
            label_map: None,
            label_offset: 0,
            missing: Vec::new(),
            skip_missing_rows: false,
        }
    }
}

fn split_cells<'a>(line: &'a str, delim: &Delimiter) -> Vec<&'a str> {
    match delim {
        Delimiter::Named(NamedDelimiter::Whitespace) => line.split_whitespace().collect(),
        Delimiter::Char(c) => line.split(*c).map(str::trim).collect(),
    }
}

fn resolve_column(col: i64, width: usize) -> Option<usize> {
    let idx = if col < 0 { width as i64 + col } else { col };
    (0..width as i64).contains(&idx).then_some(idx as usize)
}

impl TextSchema {
    fn parse_label(&self, text: &str) -> std::result::Result<u32, String> {
        if let Some(map) = &self.label_map {
            return map.get(text).copied().ok_or_else(|| format!("unmapped label {text:?}"));
        }
        let x: f64 = text.parse().map_err(|_| format!("non-numeric label {text:?}"))?;
        if x.fract() != 0.0 {
            return Err(format!("non-integer label {text:?}"));
        }
        let y = x as i64 - self.label_offset;
        u32::try_from(y).map_err(|_| format!("label {text:?} below offset {}", self.label_offset))
    }
}

/// Parses a delimited text file. Labels come from `schema.label_column`, or
/// from `labels` (one label per line) when given.
pub fn load_delimited(path: &Path, labels: Option<&Path>, schema: &TextSchema) -> Result<RawDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };

    let external_labels = match labels {
        Some(lp) => {
            let t = fs::read_to_string(lp).map_err(|e| Error::io(lp, e))?;
            let mut ys = Vec::new();
            for (row, line) in t.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                ys.push(schema.parse_label(line.trim()).map_err(|m| Error::Parse {
                    path: lp.to_path_buf(),
                    row: row + 1,
                    message: m,
                })?);
            }
            Some(ys)
        }
        None => None,
    };

    let mut width = None;
    let mut feature_cols = Vec::new();
    let mut label_col = None;
    let mut values = Vec::new();
    let mut ys = Vec::new();
    let mut data_row = 0usize;

    for (line_no, line) in text.lines().enumerate().skip(schema.header_rows) {
        if line.trim().is_empty() {
            continue;
        }
        let row = line_no + 1;
        let cells = split_cells(line, &schema.delimiter);
        let w = *width.get_or_insert_with(|| {
            label_col = if external_labels.is_none() {
                resolve_column(schema.label_column, cells.len())
            } else {
                None
            };
            let dropped: Vec<usize> = schema
                .drop_columns
                .iter()
                .filter_map(|&c| resolve_column(c, cells.len()))
                .collect();
            feature_cols = (0..cells.len())
                .filter(|&c| Some(c) != label_col && !dropped.contains(&c))
                .collect();
            cells.len()
        });
        if external_labels.is_none() && label_col.is_none() {
            return Err(parse_err(row, format!("label column {} out of range", schema.label_column)));
        }
        if cells.len() != w {
            return Err(parse_err(row, format!("ragged row: {} cells, expected {w}", cells.len())));
        }
        let this_row = data_row;
        data_row += 1;
        if cells.iter().any(|c| schema.missing.iter().any(|m| m == c)) {
            if schema.skip_missing_rows {
                continue;
            }
            return Err(parse_err(row, "missing value".into()));
        }
        for &c in &feature_cols {
            let x: f32 = cells[c]
                .parse()
                .map_err(|_| parse_err(row, format!("non-numeric cell {:?} in column {c}", cells[c])))?;
            values.push(x);
        }
        let y = match (&external_labels, label_col) {
            (Some(ext), _) => *ext
                .get(this_row)
                .ok_or_else(|| parse_err(row, "no label for row".into()))?,
            (None, Some(c)) => schema.parse_label(cells[c]).map_err(|m| parse_err(row, m))?,
            (None, None) => unreachable!(),
        };
        ys.push(y);
    }
    if let Some(ext) = &external_labels {
        if ext.len() != data_row {
            return Err(Error::CountMismatch {
                images: data_row,
                labels: ext.len(),
            });
        }
    }
    if ys.is_empty() {
        return Err(parse_err(0, "no data rows".into()));
    }
    RawDataset::new(feature_cols.len(), values, ys)
}

/// One file set of a dataset split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    /// IDX image file or delimited data file(s).
    #[serde(alias = "data")]
    pub images: FileList,
    /// IDX label file, or a separate label file for delimited data.
    #[serde(default)]
    pub labels: Option<FileList>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FileList {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl FileList {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            FileList::One(p) => vec![p.as_path()],
            FileList::Many(ps) => ps.iter().map(PathBuf::as_path).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Idx,
    Delimited,
}

/// Seeded stratified hold-out used when a dataset ships without a test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldOut {
    pub test_fraction: f64,
    pub seed: u64,
}

/// A `manifest.toml` describing where a dataset lives and how to parse it.
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub format: Format,
    pub train: SplitFiles,
    #[serde(default)]
    pub test: Option<SplitFiles>,
    #[serde(default)]
    pub holdout: Option<HoldOut>,
    #[serde(default)]
    pub schema: Option<TextSchema>,
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Quantized train/test splits plus the counts actually loaded.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub name: String,
    pub train: QuantizedDataset,
    pub test: QuantizedDataset,
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if m.test.is_none() && m.holdout.is_none() {
            return Err(Error::Config(format!(
                "{}: manifest needs either [test] files or a [holdout] split",
                path.display()
            )));
        }
        Ok(m)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn load_split(&self, files: &SplitFiles) -> Result<RawDataset> {
        let data: Vec<PathBuf> = files.images.paths().into_iter().map(|p| self.resolve(p)).collect();
        let labels: Option<Vec<PathBuf>> = files
            .labels
            .as_ref()
            .map(|l| l.paths().into_iter().map(|p| self.resolve(p)).collect());
        if let Some(l) = &labels {
            if l.len() != data.len() {
                return Err(Error::Config("data and label file lists differ in length".into()));
            }
        }
        let mut parts = Vec::new();
        for (i, d) in data.iter().enumerate() {
            let lab = labels.as_ref().map(|l| l[i].as_path());
            let part = match self.format {
                Format::Idx => {
                    let lab = lab.ok_or_else(|| Error::Config("IDX split needs a labels file".into()))?;
                    load_idx(d, lab)?
                }
                Format::Delimited => {
                    let schema = self.schema.clone().unwrap_or_default();
                    load_delimited(d, lab, &schema)?
                }
            };
            parts.push(part);
        }
        concat(parts)
    }

    /// Loads raw train and test splits.
    pub fn load_raw(&self) -> Result<(RawDataset, RawDataset)> {
        let train = self.load_split(&self.train)?;
        match (&self.test, &self.holdout) {
            (Some(t), _) => Ok((train, self.load_split(t)?)),
            (None, Some(h)) => {
                let k = train.num_classes();
                let (a, b) = stratified_indices(&train.labels, k, h.test_fraction, h.seed);
                Ok((train.subset(&a), train.subset(&b)))
            }
            (None, None) => unreachable!("validated in from_file"),
        }
    }

    /// Loads, normalizes with training-split min/max, and quantizes both splits.
    pub fn prepare(&self) -> Result<PreparedDataset> {
        let (train_raw, test_raw) = self.load_raw()?;
        Error::check_dim(train_raw.num_features, test_raw.num_features)?;
        let k = self
            .classes
            .unwrap_or_else(|| train_raw.num_classes().max(test_raw.num_classes()));
        let mut train = quantize(&train_raw, None, k)?;
        let mut test = quantize(&test_raw, train.norm.as_ref(), k)?;
        train.split = Split::Train;
        test.split = Split::Test;
        Ok(PreparedDataset {
            name: self.name.clone(),
            train,
            test,
        })
    }
}

fn concat(parts: Vec<RawDataset>) -> Result<RawDataset> {
    let mut it = parts.into_iter();
    let mut first = it.next().ok_or_else(|| Error::Config("empty file list".into()))?;
    for p in it {
        Error::check_dim(first.num_features, p.num_features)?;
        first.values.extend(p.values);
        first.labels.extend(p.labels);
    }
    Ok(first)
}

/// Synthetic quantized dataset: each class has a random prototype level per
/// feature and samples scatter around it by up to `spread` levels.
pub fn synthetic(
    samples: usize,
    num_features: usize,
    num_classes: usize,
    spread: u8,
    seed: u64,
) -> QuantizedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<u8>> = (0..num_classes)
        .map(|_| (0..num_features).map(|_| rng.gen()).collect())
        .collect();
    let mut levels = Vec::with_capacity(samples * num_features);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let k = i % num_classes;
        for &p in &protos[k] {
            let noise = rng.gen_range(-(spread as i32)..=spread as i32);
            levels.push((p as i32 + noise).clamp(0, 255) as u8);
        }
        labels.push(k as u32);
    }
    QuantizedDataset::new(num_features, LEVELS, num_classes, levels, labels)
        .expect("synthetic dataset is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(rows: &[&[f32]], labels: &[u32]) -> RawDataset {
        RawDataset::new(rows[0].len(), rows.concat(), labels.to_vec()).unwrap()
    }

    #[test]
    fn quantize_endpoints_and_constant_columns() {
        let r = raw(&[&[0.0, 5.0, -1.0], &[10.0, 5.0, 1.0], &[5.0, 5.0, 0.0]], &[0, 1, 0]);
        let q = quantize(&r, None, 2).unwrap();
        assert_eq!(q.sample(0), &[0, 0, 0]);
        assert_eq!(q.sample(1), &[255, 0, 255]);
        assert_eq!(q.sample(2), &[128, 0, 128]);
    }

    #[test]
    fn test_split_outliers_clamp() {
        let train = raw(&[&[0.0], &[10.0]], &[0, 1]);
        let q = quantize(&train, None, 2).unwrap();
        let test = raw(&[&[-5.0], &[20.0], &[5.0]], &[0, 1, 0]);
        let t = quantize(&test, q.norm.as_ref(), 2).unwrap();
        assert_eq!(t.sample(0), &[0]);
        assert_eq!(t.sample(1), &[255]);
        assert_eq!(t.sample(2), &[128]);
    }

    #[test]
    fn full_range_pixels_map_to_themselves() {
        let vals: Vec<f32> = (0..=255).map(|p| p as f32).collect();
        let r = RawDataset::new(1, vals.clone(), vec![0; 256]).unwrap();
        let q = quantize(&r, None, 1).unwrap();
        for (i, &p) in vals.iter().enumerate() {
            assert_eq!(q.sample(i)[0] as f32, p);
        }
    }

    #[test]
    fn quantized_dataset_validates_ranges() {
        assert!(matches!(
            QuantizedDataset::new(2, 4, 2, vec![0, 4], vec![0]),
            Err(Error::LevelOutOfRange { level: 4, levels: 4 })
        ));
        assert!(matches!(
            QuantizedDataset::new(1, 4, 2, vec![0], vec![2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    fn idx_fixture(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
        let img = dir.join("img");
        let lab = dir.join("lab");
        let pixels: Vec<u8> = (0..n * 4).map(|i| (i * 7) as u8).collect();
        let ys: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        write_idx(&img, &lab, 2, 2, &pixels, &ys).unwrap();
        (img, lab)
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = idx_fixture(dir.path(), 5);
        let r = load_idx(&img, &lab).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r.num_features, 4);
        assert_eq!(r.row(1), &[28.0, 35.0, 42.0, 49.0]);
        assert_eq!(r.labels, vec![0, 1, 2, 0, 1]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = idx_fixture(dir.path(), 5);

        let mut bytes = fs::read(&img).unwrap();
        bytes.truncate(bytes.len() - 1);
        let short = dir.path().join("short");
        fs::write(&short, &bytes).unwrap();
        assert!(matches!(load_idx(&short, &lab), Err(Error::Truncated { .. })));

        assert!(matches!(load_idx(&lab, &lab), Err(Error::BadMagic { found: IDX_LABELS_MAGIC, .. })));

        let (img3, lab3) = {
            let d = dir.path().join("three");
            fs::create_dir(&d).unwrap();
            idx_fixture(&d, 3)
        };
        let _ = img3;
        assert!(matches!(
            load_idx(&img, &lab3),
            Err(Error::CountMismatch { images: 5, labels: 3 })
        ));
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn delimited_with_header_and_label_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "a,b,y\n1,2,1\n3,4.5,3\n\n5,6,2\n");
        let schema = TextSchema {
            header_rows: 1,
            label_offset: 1,
            ..Default::default()
        };
        let r = load_delimited(&p, None, &schema).unwrap();
        assert_eq!(r.num_features, 2);
        assert_eq!(r.values, vec![1.0, 2.0, 3.0, 4.5, 5.0, 6.0]);
        assert_eq!(r.labels, vec![0, 2, 1]);
    }

    #[test]
    fn delimited_whitespace_with_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let x = write(dir.path(), "X.txt", "  1.0e-1  -2.5\n 3   4\n");
        let y = write(dir.path(), "y.txt", "1\n6\n");
        let schema = TextSchema {
            delimiter: Delimiter::Named(NamedDelimiter::Whitespace),
            label_offset: 1,
            ..Default::default()
        };
        let r = load_delimited(&x, Some(&y), &schema).unwrap();
        assert_eq!(r.values, vec![0.1, -2.5, 3.0, 4.0]);
        assert_eq!(r.labels, vec![0, 5]);
    }

    #[test]
    fn delimited_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", "1,2,0\n1,x,1\n");
        match load_delimited(&p, None, &TextSchema::default()) {
            Err(Error::Parse { row, message, .. }) => {
                assert_eq!(row, 2);
                assert!(message.contains("non-numeric"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "ragged.csv", "1,2,0\n1,1\n");
        assert!(matches!(
            load_delimited(&p, None, &TextSchema::default()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn delimited_missing_rows_are_skipped_when_requested() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "1,?,1.\n2,3,2.\n");
        let mut schema = TextSchema {
            missing: vec!["?".into()],
            label_offset: 1,
            ..Default::default()
        };
        assert!(load_delimited(&p, None, &schema).is_err());
        schema.skip_missing_rows = true;
        let r = load_delimited(&p, None, &schema).unwrap();
        assert_eq!(r.labels, vec![1]);
    }

    #[test]
    fn label_map_and_dropped_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "id1;N;0.5\nid2;S;1.5\n");
        let schema = TextSchema {
            delimiter: Delimiter::Char(';'),
            label_column: 1,
            drop_columns: vec![0],
            label_map: Some([("N".to_string(), 0), ("S".to_string(), 1)].into()),
            ..Default::default()
        };
        let r = load_delimited(&p, None, &schema).unwrap();
        assert_eq!(r.values, vec![0.5, 1.5]);
        assert_eq!(r.labels, vec![0, 1]);
    }

    #[test]
    fn stratified_split_counts() {
        // 1655/295/176 per class reproduces an 80/20 split of 1701/425
        let mut labels = vec![0u32; 1655];
        labels.extend(vec![1u32; 295]);
        labels.extend(vec![2u32; 176]);
        let (a, b) = stratified_indices(&labels, 3, 0.2, 7);
        assert_eq!((a.len(), b.len()), (1701, 425));
        let (a2, b2) = stratified_indices(&labels, 3, 0.2, 7);
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn manifest_with_holdout() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("f1,f2,label\n");
        for i in 0..50 {
            csv.push_str(&format!("{},{},{}\n", i, 50 - i, 1 + i % 2));
        }
        write(dir.path(), "data.csv", &csv);
        let m = write(
            dir.path(),
            "manifest.toml",
            r#"
name = "toy"
format = "delimited"
[train]
data = "data.csv"
[holdout]
test_fraction = 0.2
seed = 1
[schema]
header_rows = 1
label_offset = 1
"#,
        );
        let ds = DatasetManifest::from_file(&m).unwrap().prepare().unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (40, 10));
        assert_eq!(ds.train.num_classes(), 2);
        assert_eq!(ds.test.split, Split::Test);
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(
            dir.path(),
            "manifest.toml",
            "name = \"x\"\nformat = \"idx\"\nbogus = 1\n[train]\nimages = \"a\"\nlabels = \"b\"\n",
        );
        assert!(DatasetManifest::from_file(&m).is_err());
    }
}
