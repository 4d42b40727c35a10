//! Dataset pipeline: raw multivariate series in, training structures out.
//!
//! An instance pairs an input window x with its label window y; everything
//! strictly before x is that instance's history, from which the sliding
//! windows of the historical set are cut. Splits are chronological, never
//! shuffled, so the shift structure between train and test survives.
//! Min-max statistics are fit on the training split only and applied
//! identically everywhere.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A raw multivariate series: rows are features, columns are time steps.
#[derive(Debug, Clone)]
pub struct RawSeries {
    values: Tensor,
    timestamps: Option<Vec<f64>>,
    feature_names: Option<Vec<String>>,
}

impl RawSeries {
    pub fn new(
        values: Tensor,
        timestamps: Option<Vec<f64>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = values.cols()?;
        if let Some(ts) = &timestamps {
            if ts.len() != n {
                return Err(Error::data(format!(
                    "{} timestamps for {} time steps",
                    ts.len(),
                    n
                )));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::data("timestamps are not strictly increasing"));
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != values.rows()? {
                return Err(Error::data("feature name count does not match rows"));
            }
        }
        Ok(RawSeries {
            values,
            timestamps,
            feature_names,
        })
    }

    pub fn num_features(&self) -> usize {
        self.values.rows().expect("validated rank-2")
    }

    pub fn len(&self) -> usize {
        self.values.cols().expect("validated rank-2")
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn value_at(&self, row: usize, t: usize) -> f64 {
        let cols = self.len();
        self.values.data()[row * cols + t]
    }

    /// Extract the given feature rows over [start, start+len) as a
    /// [rows x len] tensor.
    pub fn window(&self, rows: &[usize], start: usize, len: usize) -> Result<Tensor> {
        let n = self.len();
        if start + len > n {
            return Err(Error::dim(format!(
                "window [{}, {}) out of range for series length {}",
                start,
                start + len,
                n
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            if r >= self.num_features() {
                return Err(Error::dim(format!(
                    "feature row {} out of range ({} rows)",
                    r,
                    self.num_features()
                )));
            }
            data.extend_from_slice(&self.values.data()[r * n + start..r * n + start + len]);
        }
        Tensor::new(Shape::matrix(rows.len(), len), data)
    }

    /// Same series with each feature row rescaled in place.
    pub fn map_rows(&self, f: impl Fn(usize, f64) -> f64) -> RawSeries {
        let n = self.len();
        let mut data = self.values.data().to_vec();
        for r in 0..self.num_features() {
            for t in 0..n {
                data[r * n + t] = f(r, data[r * n + t]);
            }
        }
        RawSeries {
            values: Tensor::new(self.values.shape().clone(), data).expect("same shape"),
            timestamps: self.timestamps.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Windowing parameters: `t` is the historical window length, `t_x`/`t_y` the
/// input and label lengths, instances start every `stride` steps.
#[derive(Debug, Clone)]
pub struct SegmentConfig {
    pub t: usize,
    pub t_x: usize,
    pub t_y: usize,
    pub stride: usize,
    pub feature_rows: Vec<usize>,
    pub target_rows: Vec<usize>,
}

/// One training pair plus the index bookkeeping for its history.
#[derive(Debug, Clone)]
pub struct Instance {
    pub x: Tensor,
    pub y: Tensor,
    /// Time index where x begins; the history is [0, x_start).
    pub x_start: usize,
    pub t_x: usize,
    pub t_y: usize,
}

impl Instance {
    pub fn history_len(&self) -> usize {
        self.x_start
    }

    pub fn y_start(&self) -> usize {
        self.x_start + self.t_x
    }
}

/// Cut instances left to right. Each instance needs a full history of at
/// least `t` steps before its input window, so the first usable start is
/// index `t`; the label window must fit inside the series.
pub fn segment(raw: &RawSeries, cfg: &SegmentConfig) -> Result<Vec<Instance>> {
    if cfg.stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    if cfg.feature_rows.is_empty() || cfg.target_rows.is_empty() {
        return Err(Error::config("feature and target rows must be nonempty"));
    }
    let min_len = cfg.t + cfg.t_x + cfg.t_y;
    if raw.len() < min_len {
        return Err(Error::config(format!(
            "series length {} too short: need at least t + t_x + t_y = {}",
            raw.len(),
            min_len
        )));
    }
    let mut out = Vec::new();
    let mut x_start = cfg.t;
    while x_start + cfg.t_x + cfg.t_y <= raw.len() {
        let x = raw.window(&cfg.feature_rows, x_start, cfg.t_x)?;
        let y = raw.window(&cfg.target_rows, x_start + cfg.t_x, cfg.t_y)?;
        out.push(Instance {
            x,
            y,
            x_start,
            t_x: cfg.t_x,
            t_y: cfg.t_y,
        });
        x_start += cfg.stride;
    }
    Ok(out)
}

/// How to thin an oversized historical set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryPolicy {
    /// Keep the latest `l_max` windows.
    Recent,
    /// Keep evenly spaced windows including the first and the last.
    Uniform,
}

impl HistoryPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            HistoryPolicy::Recent => "recent",
            HistoryPolicy::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "recent" => Ok(HistoryPolicy::Recent),
            "uniform" => Ok(HistoryPolicy::Uniform),
            other => Err(Error::config(format!("unknown history policy '{}'", other))),
        }
    }
}

/// The sliding windows over one instance's history, time-ordered.
#[derive(Debug, Clone)]
pub struct HistoricalSet {
    pub windows: Vec<Tensor>,
    /// Start index of each kept window in the raw series.
    pub starts: Vec<usize>,
}

impl HistoricalSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Number of length-`t` sliding windows in a history span before capping.
pub fn full_window_count(span: usize, t: usize) -> Option<usize> {
    if span < t {
        None
    } else {
        Some(span - t + 1)
    }
}

/// Evenly spaced indices over [0, count), endpoints included.
fn uniform_indices(count: usize, keep: usize) -> Vec<usize> {
    if keep >= count {
        return (0..count).collect();
    }
    if keep == 1 {
        return vec![count - 1]; // degenerate: keep the most recent
    }
    (0..keep)
        .map(|j| ((j as f64) * (count as f64 - 1.0) / (keep as f64 - 1.0)).round() as usize)
        .collect()
}

/// Build the historical set for one instance: all length-`t` windows of its
/// history (stride 1), thinned to at most `l_max` by the given policy.
pub fn build_history(
    inst: &Instance,
    raw: &RawSeries,
    feature_rows: &[usize],
    t: usize,
    l_max: usize,
    policy: HistoryPolicy,
) -> Result<HistoricalSet> {
    let span = inst.history_len();
    let full = full_window_count(span, t).ok_or_else(|| {
        Error::contract(format!(
            "history span {} is shorter than window length {}",
            span, t
        ))
    })?;
    if l_max == 0 {
        return Err(Error::config("l_max must be positive"));
    }
    let kept: Vec<usize> = if full <= l_max {
        (0..full).collect()
    } else {
        match policy {
            HistoryPolicy::Recent => (full - l_max..full).collect(),
            HistoryPolicy::Uniform => uniform_indices(full, l_max),
        }
    };
    let mut windows = Vec::with_capacity(kept.len());
    let mut starts = Vec::with_capacity(kept.len());
    for &i in &kept {
        windows.push(raw.window(feature_rows, i, t)?);
        starts.push(i);
    }
    Ok(HistoricalSet { windows, starts })
}

/// Which split a statistic was computed from; normalization statistics must
/// come from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

/// Per-feature min/max over the training split. Constant features normalize
/// to 0 rather than NaN; inversion returns the constant.
#[derive(Debug, Clone)]
pub struct NormStats {
    min: Vec<f64>,
    max: Vec<f64>,
    source: SplitTag,
}

impl NormStats {
    /// Fit per-raw-row statistics from the given instances' x and y tensors.
    /// `source` records which split the instances came from; `apply`/`invert`
    /// refuse statistics that were not fit on the training split.
    pub fn fit(
        instances: &[Instance],
        feature_rows: &[usize],
        target_rows: &[usize],
        num_raw_rows: usize,
        source: SplitTag,
    ) -> Result<NormStats> {
        if instances.is_empty() {
            return Err(Error::contract("fit_normalizer: no instances"));
        }
        let mut min = vec![f64::INFINITY; num_raw_rows];
        let mut max = vec![f64::NEG_INFINITY; num_raw_rows];
        for inst in instances {
            for (i, &row) in feature_rows.iter().enumerate() {
                for &v in inst.x.row(i)? {
                    min[row] = min[row].min(v);
                    max[row] = max[row].max(v);
                }
            }
            for (i, &row) in target_rows.iter().enumerate() {
                for &v in inst.y.row(i)? {
                    min[row] = min[row].min(v);
                    max[row] = max[row].max(v);
                }
            }
        }
        Ok(NormStats { min, max, source })
    }

    fn check_source(&self) -> Result<()> {
        if self.source != SplitTag::Train {
            return Err(Error::contract(
                "normalization statistics must be fit on the training split",
            ));
        }
        Ok(())
    }

    pub fn apply_value(&self, row: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[row], self.max[row]);
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, row: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[row], self.max[row]);
        if hi > lo {
            v * (hi - lo) + lo
        } else {
            lo
        }
    }

    /// Normalize a whole series with training statistics.
    pub fn apply_series(&self, raw: &RawSeries) -> Result<RawSeries> {
        self.check_source()?;
        if raw.num_features() != self.min.len() {
            return Err(Error::dim(format!(
                "normalizer has {} rows, series has {}",
                self.min.len(),
                raw.num_features()
            )));
        }
        Ok(raw.map_rows(|r, v| self.apply_value(r, v)))
    }

    /// Denormalize a prediction/target tensor whose rows are `target_rows`.
    pub fn invert_targets(&self, t: &Tensor, target_rows: &[usize]) -> Result<Tensor> {
        self.check_source()?;
        if t.rows()? != target_rows.len() {
            return Err(Error::dim(format!(
                "tensor has {} rows, expected {}",
                t.rows()?,
                target_rows.len()
            )));
        }
        let cols = t.cols()?;
        let mut data = t.data().to_vec();
        for (i, &row) in target_rows.iter().enumerate() {
            for c in 0..cols {
                data[i * cols + c] = self.invert_value(row, data[i * cols + c]);
            }
        }
        Tensor::new(t.shape().clone(), data)
    }
}

/// Chronological split: floor the train and valid counts, remainder to test,
/// so test is never empty by rounding.
pub fn chronological_split<T>(
    items: Vec<T>,
    fractions: (f64, f64, f64),
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv < 0.0 || fe <= 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {}:{}:{} must be positive and sum to 1",
            ft, fv, fe
        )));
    }
    let n = items.len();
    let n_train = (n as f64 * ft).floor() as usize;
    let n_valid = (n as f64 * fv).floor() as usize;
    if n_train == 0 || n_valid == 0 || n_train + n_valid >= n {
        return Err(Error::config(format!(
            "split {}:{}:{} leaves an empty split for {} instances",
            ft, fv, fe, n
        )));
    }
    let mut items = items;
    let test = items.split_off(n_train + n_valid);
    let valid = items.split_off(n_train);
    Ok((items, valid, test))
}

/// What to do with a missing (empty) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    Drop,
    ForwardFill,
}

impl MissingPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            MissingPolicy::Drop => "drop",
            MissingPolicy::ForwardFill => "ffill",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(MissingPolicy::Drop),
            "ffill" => Ok(MissingPolicy::ForwardFill),
            other => Err(Error::config(format!("unknown missing policy '{}'", other))),
        }
    }
}

/// Column selection and parsing rules for a CSV file.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub columns: Vec<String>,
    pub timestamp_col: Option<String>,
    pub delimiter: u8,
    pub missing: MissingPolicy,
}

/// Load a CSV with a header row; each data row becomes one time step. Empty
/// cells follow the missing policy; malformed numbers are hard errors naming
/// the row and column. Rows with a missing leading value under forward-fill
/// are dropped (there is nothing to fill from).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::data(format!(
                "{}: column '{}' not found in header",
                path.display(),
                name
            ))
        })
    };
    let value_cols: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let ts_col = schema
        .timestamp_col
        .as_ref()
        .map(|c| col_index(c))
        .transpose()?;

    let d = value_cols.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut timestamps: Vec<f64> = Vec::new();
    let mut last_row: Option<Vec<f64>> = None;

    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(d);
        let mut missing_at: Option<usize> = None;
        for (i, &c) in value_cols.iter().enumerate() {
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                missing_at = missing_at.or(Some(i));
                row.push(f64::NAN);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line,
                    message: format!("column '{}': invalid number '{}'", schema.columns[i], cell),
                })?;
                row.push(v);
            }
        }
        if missing_at.is_some() {
            match schema.missing {
                MissingPolicy::Drop => continue,
                MissingPolicy::ForwardFill => match &last_row {
                    Some(prev) => {
                        for (i, v) in row.iter_mut().enumerate() {
                            if v.is_nan() {
                                *v = prev[i];
                            }
                        }
                    }
                    None => continue, // leading gap: nothing to fill from
                },
            }
        }
        if let Some(c) = ts_col {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("timestamp: invalid number '{}'", cell),
            })?;
            timestamps.push(v);
        }
        for (i, &v) in row.iter().enumerate() {
            columns[i].push(v);
        }
        last_row = Some(row);
    }

    let n = columns.first().map(|c| c.len()).unwrap_or(0);
    if n == 0 {
        return Err(Error::data(format!(
            "{}: no usable data rows",
            path.display()
        )));
    }
    let mut data = Vec::with_capacity(d * n);
    for col in &columns {
        data.extend_from_slice(col);
    }
    RawSeries::new(
        Tensor::new(Shape::matrix(d, n), data)?,
        if ts_col.is_some() { Some(timestamps) } else { None },
        Some(schema.columns.clone()),
    )
}

/// Write a series as CSV with full round-trip precision (shortest
/// representation that parses back to the same f64).
pub fn write_csv(path: &Path, raw: &RawSeries, delimiter: char) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let d = raw.num_features();
    let names: Vec<String> = match raw.feature_names() {
        Some(n) => n.to_vec(),
        None => (0..d).map(|i| format!("f{}", i)).collect(),
    };
    let mut header = String::new();
    if raw.timestamps().is_some() {
        header.push_str("timestamp");
        header.push(delimiter);
    }
    header.push_str(&names.join(&delimiter.to_string()));
    writeln!(out, "{}", header)?;
    for t in 0..raw.len() {
        let mut line = String::new();
        if let Some(ts) = raw.timestamps() {
            let _ = write!(line, "{}", ts[t]);
            line.push(delimiter);
        }
        for r in 0..d {
            if r > 0 {
                line.push(delimiter);
            }
            let _ = write!(line, "{}", raw.value_at(r, t));
        }
        writeln!(out, "{}", line)?;
    }
    out.flush()?;
    Ok(())
}

/// Everything needed to reproduce a dataset: file, columns, windowing, and
/// split, as a small key=value text file.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub csv_path: PathBuf,
    pub feature_cols: Vec<String>,
    pub target_cols: Vec<String>,
    pub timestamp_col: Option<String>,
    pub delimiter: char,
    pub missing: MissingPolicy,
    pub t: usize,
    pub t_x: usize,
    pub t_y: usize,
    pub k: usize,
    pub stride: usize,
    pub split: (f64, f64, f64),
    pub l_max: usize,
    pub history_policy: HistoryPolicy,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "csv={}", self.csv_path.display());
        let _ = writeln!(s, "features={}", self.feature_cols.join(","));
        let _ = writeln!(s, "targets={}", self.target_cols.join(","));
        if let Some(ts) = &self.timestamp_col {
            let _ = writeln!(s, "timestamp={}", ts);
        }
        let _ = writeln!(s, "delimiter={}", self.delimiter);
        let _ = writeln!(s, "missing={}", self.missing.as_str());
        let _ = writeln!(s, "t={}", self.t);
        let _ = writeln!(s, "t_x={}", self.t_x);
        let _ = writeln!(s, "t_y={}", self.t_y);
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "stride={}", self.stride);
        let _ = writeln!(s, "split={},{},{}", self.split.0, self.split.1, self.split.2);
        let _ = writeln!(s, "l_max={}", self.l_max);
        let _ = writeln!(s, "history_policy={}", self.history_policy.as_str());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse_text(text: &str, origin: &Path) -> Result<DatasetManifest> {
        let mut kv: HashMap<String, (String, usize)> = HashMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.display().to_string(),
                line: i + 1,
                message: format!("expected key=value, got '{}'", line),
            })?;
            kv.insert(key.trim().to_string(), (value.trim().to_string(), i + 1));
        }
        let err_at = |line: usize, message: String| Error::Parse {
            path: origin.display().to_string(),
            line,
            message,
        };
        let required = |key: &str| -> Result<(String, usize)> {
            kv.get(key).cloned().ok_or_else(|| {
                Error::data(format!("{}: missing key '{}'", origin.display(), key))
            })
        };
        let parse_usize = |key: &str| -> Result<usize> {
            let (v, line) = required(key)?;
            v.parse()
                .map_err(|_| err_at(line, format!("{}: invalid integer '{}'", key, v)))
        };
        let optional_usize = |key: &str, default: usize| -> Result<usize> {
            match kv.get(key) {
                Some((v, line)) => v
                    .parse()
                    .map_err(|_| err_at(*line, format!("{}: invalid integer '{}'", key, v))),
                None => Ok(default),
            }
        };

        let (csv, _) = required("csv")?;
        let csv_path = {
            let p = PathBuf::from(&csv);
            if p.is_relative() {
                origin.parent().map(|d| d.join(&p)).unwrap_or(p)
            } else {
                p
            }
        };
        let (features, fline) = required("features")?;
        let feature_cols: Vec<String> = features
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if feature_cols.is_empty() {
            return Err(err_at(fline, "features: empty list".to_string()));
        }
        let (targets, tline) = required("targets")?;
        let target_cols: Vec<String> = targets
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if target_cols.is_empty() {
            return Err(err_at(tline, "targets: empty list".to_string()));
        }
        let timestamp_col = kv.get("timestamp").map(|(v, _)| v.clone());
        let delimiter = match kv.get("delimiter") {
            Some((v, line)) => {
                let mut chars = v.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => c,
                    _ => return Err(err_at(*line, format!("delimiter: expected one character, got '{}'", v))),
                }
            }
            None => ',',
        };
        let missing = match kv.get("missing") {
            Some((v, line)) => {
                MissingPolicy::parse(v).map_err(|e| err_at(*line, e.to_string()))?
            }
            None => MissingPolicy::ForwardFill,
        };
        let t = parse_usize("t")?;
        let t_x = optional_usize("t_x", t)?;
        let t_y = optional_usize("t_y", 1)?;
        let k = parse_usize("k")?;
        let stride = optional_usize("stride", 1)?;
        let split = match kv.get("split") {
            Some((v, line)) => {
                let parts: Vec<&str> = v.split(',').map(|s| s.trim()).collect();
                if parts.len() != 3 {
                    return Err(err_at(*line, format!("split: expected three fractions, got '{}'", v)));
                }
                let p: Vec<f64> = parts
                    .iter()
                    .map(|s| {
                        s.parse()
                            .map_err(|_| err_at(*line, format!("split: invalid fraction '{}'", s)))
                    })
                    .collect::<Result<_>>()?;
                (p[0], p[1], p[2])
            }
            None => (0.6, 0.2, 0.2),
        };
        let l_max = optional_usize("l_max", 128)?;
        let history_policy = match kv.get("history_policy") {
            Some((v, line)) => {
                HistoryPolicy::parse(v).map_err(|e| err_at(*line, e.to_string()))?
            }
            None => HistoryPolicy::Recent,
        };
        Ok(DatasetManifest {
            csv_path,
            feature_cols,
            target_cols,
            timestamp_col,
            delimiter,
            missing,
            t,
            t_x,
            t_y,
            k,
            stride,
            split,
            l_max,
            history_policy,
        })
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        DatasetManifest::parse_text(&text, path)
    }
}

/// A fully prepared dataset: normalized series, chronological splits, and the
/// statistics used, ready for training and evaluation.
pub struct Dataset {
    pub raw: RawSeries,
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
    pub stats: NormStats,
    pub feature_rows: Vec<usize>,
    pub target_rows: Vec<usize>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Load, segment, split, fit statistics on the training split, then
    /// re-materialize everything on the normalized series.
    pub fn prepare(manifest: &DatasetManifest) -> Result<Dataset> {
        // The CSV must contain every named column; the series holds the union
        // of features and targets (targets may or may not be input features).
        let mut columns = manifest.feature_cols.clone();
        for t in &manifest.target_cols {
            if !columns.contains(t) {
                columns.push(t.clone());
            }
        }
        let schema = CsvSchema {
            columns: columns.clone(),
            timestamp_col: manifest.timestamp_col.clone(),
            delimiter: manifest.delimiter as u8,
            missing: manifest.missing,
        };
        let raw = load_csv(&manifest.csv_path, &schema)?;
        let col_row = |name: &String| columns.iter().position(|c| c == name).unwrap();
        let feature_rows: Vec<usize> = manifest.feature_cols.iter().map(col_row).collect();
        let target_rows: Vec<usize> = manifest.target_cols.iter().map(col_row).collect();

        let seg = SegmentConfig {
            t: manifest.t,
            t_x: manifest.t_x,
            t_y: manifest.t_y,
            stride: manifest.stride,
            feature_rows: feature_rows.clone(),
            target_rows: target_rows.clone(),
        };
        let instances = segment(&raw, &seg)?;
        let n = instances.len();
        let (train, _valid, _test) = chronological_split(instances, manifest.split)?;

        let stats = NormStats::fit(
            &train,
            &feature_rows,
            &target_rows,
            raw.num_features(),
            SplitTag::Train,
        )?;
        let normalized = stats.apply_series(&raw)?;
        let instances = segment(&normalized, &seg)?;
        debug_assert_eq!(instances.len(), n);
        let (train, valid, test) = chronological_split(instances, manifest.split)?;

        Ok(Dataset {
            raw: normalized,
            train,
            valid,
            test,
            stats,
            feature_rows,
            target_rows,
            manifest: manifest.clone(),
        })
    }

    pub fn history(&self, inst: &Instance) -> Result<HistoricalSet> {
        build_history(
            inst,
            &self.raw,
            &self.feature_rows,
            self.manifest.t,
            self.manifest.l_max,
            self.manifest.history_policy,
        )
    }
}
