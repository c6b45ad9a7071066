//! Sequence corpora: the sine benchmark, CSV ingestion, sliding windows,
//! min-max scaling and the sequence CSV interchange format.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::SequenceBatch;
use crate::error::{Error, Result};
use crate::rng::{self, SeedRng};

/// Per-feature affine map from `[min, max]` onto `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalerState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

pub const DEFAULT_RANGE: (f64, f64) = (-1.0, 1.0);

impl ScalerState {
    /// Fits per-feature extrema over every row of `rows` (`[count, features]`).
    pub fn fit_rows(rows: &Array2<f64>, lo: f64, hi: f64) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InsufficientData("cannot fit a scaler on zero rows".into()));
        }
        if !(lo < hi) {
            return Err(Error::config("scaler.range", format!("need lo < hi, got [{lo}, {hi}]")));
        }
        let min = rows
            .axis_iter(Axis(1))
            .map(|col| col.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let max = rows
            .axis_iter(Axis(1))
            .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let scaler = ScalerState { min, max, lo, hi };
        scaler.validate()?;
        Ok(scaler)
    }

    /// Fits over all steps of all sequences in `batch`.
    pub fn fit(batch: &SequenceBatch, lo: f64, hi: f64) -> Result<Self> {
        let v = batch.values();
        let rows = v
            .to_shape((v.len_of(Axis(0)) * v.len_of(Axis(1)), v.len_of(Axis(2))))
            .map_err(|e| Error::Data(e.to_string()))?
            .to_owned();
        Self::fit_rows(&rows, lo, hi)
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    /// Rejects mismatched lengths, non-finite extrema and spans that overflow.
    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::Data(format!(
                "scaler has {} minima but {} maxima",
                self.min.len(),
                self.max.len()
            )));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Data(format!("scaler range [{}, {}] is invalid", self.lo, self.hi)));
        }
        for (j, (a, b)) in self.min.iter().zip(&self.max).enumerate() {
            if !(a.is_finite() && b.is_finite() && a <= b && (b - a).is_finite()) {
                return Err(Error::Data(format!("scaler feature {j} has invalid extrema [{a}, {b}]")));
            }
        }
        Ok(())
    }

    fn check(&self, dims: usize) -> Result<()> {
        if dims != self.dims() {
            return Err(Error::Shape {
                expected: format!("{} features", self.dims()),
                got: format!("{dims} features"),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn forward_value(&self, feature: usize, x: f64) -> f64 {
        let (min, max) = (self.min[feature], self.max[feature]);
        if max == min {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (x - min) / (max - min) * (self.hi - self.lo)
        }
    }

    #[inline]
    pub fn inverse_value(&self, feature: usize, y: f64) -> f64 {
        let (min, max) = (self.min[feature], self.max[feature]);
        if max == min {
            min
        } else {
            min + (y - self.lo) / (self.hi - self.lo) * (max - min)
        }
    }

    pub fn transform_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(rows.ncols())?;
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.forward_value(j, *v);
            }
        }
        Ok(out)
    }

    fn map_batch(&self, batch: &SequenceBatch, f: impl Fn(usize, f64) -> f64) -> Result<Array3<f64>> {
        self.check(batch.dims())?;
        let mut out = batch.values().clone();
        for mut lane in out.lanes_mut(Axis(2)) {
            for (j, v) in lane.iter_mut().enumerate() {
                *v = f(j, *v);
            }
        }
        Ok(out)
    }
}

/// Maps `batch` into scaled space.
pub fn scale(batch: &SequenceBatch, scaler: &ScalerState) -> Result<SequenceBatch> {
    let values = scaler.map_batch(batch, |j, v| scaler.forward_value(j, v))?;
    Ok(SequenceBatch::new(values)?.with_scaling(scaler.clone()))
}

/// Maps a scaled batch back to original units. Values outside `[lo, hi]`
/// extrapolate linearly.
pub fn inverse_scale(batch: &SequenceBatch, scaler: &ScalerState) -> Result<SequenceBatch> {
    let values = scaler.map_batch(batch, |j, v| scaler.inverse_value(j, v))?;
    SequenceBatch::new(values)
}

/// Window length, stride and the held-out tail fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub len: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_heldout_fraction")]
    pub heldout_fraction: f64,
}

fn default_stride() -> usize {
    1
}

fn default_heldout_fraction() -> f64 {
    0.2
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::config("dataset.window.len", "must be at least 2"));
        }
        if self.stride < 1 {
            return Err(Error::config("dataset.window.stride", "must be at least 1"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::config(
                "dataset.window.heldout_fraction",
                format!("must lie in (0, 1), got {}", self.heldout_fraction),
            ));
        }
        Ok(())
    }
}

/// Number of windows of length `len` at `stride` over `total` rows.
pub fn window_count(total: usize, len: usize, stride: usize) -> usize {
    if total < len || stride == 0 {
        0
    } else {
        (total - len) / stride + 1
    }
}

/// Cuts `rows` (`[time, features]`) into overlapping windows.
pub fn sliding_windows(rows: &Array2<f64>, len: usize, stride: usize) -> Result<Array3<f64>> {
    let total = rows.nrows();
    if total < len {
        return Err(Error::InsufficientData(format!(
            "{total} rows cannot fill a window of length {len}"
        )));
    }
    let count = window_count(total, len, stride);
    let dims = rows.ncols();
    let mut out = Array3::zeros((count, len, dims));
    for w in 0..count {
        let start = w * stride;
        out.index_axis_mut(Axis(0), w)
            .assign(&rows.slice(ndarray::s![start..start + len, ..]));
    }
    Ok(out)
}

/// One sine sequence: `x_i(t) = sin(2π·f·t/N + φ_i)` for `t = 0..N-1`.
pub fn sine_sequence(frequency: f64, phases: &[f64], seq_len: usize) -> Array2<f64> {
    let mut out = Array2::zeros((seq_len, phases.len()));
    for t in 0..seq_len {
        let time = t as f64 / seq_len as f64;
        for (i, phase) in phases.iter().enumerate() {
            out[(t, i)] = (2.0 * PI * frequency * time + phase).sin();
        }
    }
    out
}

/// Sine benchmark: per sequence one frequency `f ~ U[0, 1]`, per feature a
/// phase `φ ~ U[-π, π]`.
pub fn generate_sine(
    num_sequences: usize,
    seq_len: usize,
    dims: usize,
    rng: &mut SeedRng,
) -> Result<SequenceBatch> {
    if num_sequences == 0 {
        return Err(Error::config("dataset.num_sequences", "must be at least 1"));
    }
    if seq_len < 2 {
        return Err(Error::config("dataset.seq_len", "must be at least 2"));
    }
    if dims == 0 {
        return Err(Error::config("dataset.dims", "must be at least 1"));
    }
    let mut values = Array3::zeros((num_sequences, seq_len, dims));
    for n in 0..num_sequences {
        let frequency: f64 = rng.random_range(0.0..=1.0);
        let phases: Vec<f64> = (0..dims).map(|_| rng.random_range(-PI..=PI)).collect();
        values
            .index_axis_mut(Axis(0), n)
            .assign(&sine_sequence(frequency, &phases, seq_len));
    }
    SequenceBatch::new(values)
}

/// Options for reading a raw time-series CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOptions {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Cell texts (after trimming) treated as missing; rows containing them are dropped.
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    /// Numeric sentinels treated as missing (e.g. -200 in some sensor corpora).
    #[serde(default)]
    pub missing_sentinels: Vec<f64>,
}

fn default_delimiter() -> char {
    ','
}

fn default_missing_tokens() -> Vec<String> {
    ["", "NA", "N/A", "NaN", "nan", "null", "NULL", "?"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: default_delimiter(),
            missing_tokens: default_missing_tokens(),
            missing_sentinels: Vec::new(),
        }
    }
}

/// Rows of the selected columns, in file order, after dropping rows with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Array2<f64>,
    pub dropped_rows: usize,
}

/// Parses a headed CSV and extracts `columns` by name.
///
/// Row numbers in errors are one-based data rows (the header is row 0).
pub fn parse_csv_table<R: Read>(reader: R, columns: &[String], options: &CsvOptions) -> Result<CsvTable> {
    if columns.is_empty() {
        return Err(Error::config("dataset.columns", "select at least one column"));
    }
    if !options.delimiter.is_ascii() {
        return Err(Error::config("dataset.csv.delimiter", "must be an ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let mut positions = Vec::with_capacity(columns.len());
    for name in columns {
        let pos = headers
            .iter()
            .position(|h| h.trim() == name.as_str())
            .ok_or_else(|| Error::config("dataset.columns", format!("column `{name}` not found in CSV header")))?;
        positions.push(pos);
    }
    let mut data = Vec::new();
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            reason: e.to_string(),
        })?;
        let mut values = Vec::with_capacity(positions.len());
        let mut missing = false;
        for (name, &pos) in columns.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("").trim();
            if options.missing_tokens.iter().any(|tok| tok == cell) {
                missing = true;
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                reason: format!("`{cell}` is not a number"),
            })?;
            if !value.is_finite() || options.missing_sentinels.contains(&value) {
                missing = true;
                continue;
            }
            values.push(value);
        }
        if missing {
            dropped += 1;
        } else {
            data.extend(values);
            kept += 1;
        }
    }
    let rows = Array2::from_shape_vec((kept, columns.len()), data).expect("row width is fixed");
    Ok(CsvTable {
        columns: columns.to_vec(),
        rows,
        dropped_rows: dropped,
    })
}

/// Scaled train and held-out windows cut from one series.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: SequenceBatch,
    pub heldout: SequenceBatch,
    pub scaler: ScalerState,
    pub columns: Vec<String>,
}

/// Splits a table into a contiguous training head and held-out tail, fits the
/// scaler on the head only, then windows each part separately so no window
/// spans the boundary.
pub fn window_table(table: &CsvTable, window: &WindowSpec) -> Result<Corpus> {
    window.validate()?;
    let total = table.rows.nrows();
    if total < window.len {
        return Err(Error::InsufficientData(format!(
            "{total} usable rows but the window length is {}",
            window.len
        )));
    }
    let heldout_rows = ((total as f64) * window.heldout_fraction).round() as usize;
    let train_rows = total - heldout_rows;
    if train_rows < window.len || heldout_rows < window.len {
        return Err(Error::InsufficientData(format!(
            "{total} usable rows split into {train_rows} train / {heldout_rows} held-out rows; \
             each part needs at least {} rows",
            window.len
        )));
    }
    let head = table.rows.slice(ndarray::s![..train_rows, ..]).to_owned();
    let tail = table.rows.slice(ndarray::s![train_rows.., ..]).to_owned();
    let scaler = ScalerState::fit_rows(&head, DEFAULT_RANGE.0, DEFAULT_RANGE.1)?;
    let train = sliding_windows(&scaler.transform_rows(&head)?, window.len, window.stride)?;
    let heldout = sliding_windows(&scaler.transform_rows(&tail)?, window.len, window.stride)?;
    Ok(Corpus {
        train: SequenceBatch::new(train)?.with_scaling(scaler.clone()),
        heldout: SequenceBatch::new(heldout)?.with_scaling(scaler.clone()),
        scaler,
        columns: table.columns.clone(),
    })
}

pub fn load_csv(path: &Path, columns: &[String], window: &WindowSpec, options: &CsvOptions) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let table = parse_csv_table(std::io::BufReader::new(file), columns, options)?;
    window_table(&table, window)
}

/// Column names used by the sequence CSV format.
pub fn feature_header(dims: usize) -> Vec<String> {
    let mut h = vec!["sequence_id".to_string(), "step_index".to_string()];
    h.extend((0..dims).map(|i| format!("feature_{i}")));
    h
}

/// Writes `batch` as `sequence_id,step_index,feature_0..feature_{D-1}` rows.
/// Floats use the shortest representation that round-trips exactly.
pub fn write_sequences_csv<W: Write>(writer: W, batch: &SequenceBatch) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Data(format!("writing sequence CSV: {e}"));
    wtr.write_record(feature_header(batch.dims())).map_err(io_err)?;
    let mut record = Vec::with_capacity(batch.dims() + 2);
    for s in 0..batch.len() {
        for (step, row) in batch.sequence(s).rows().into_iter().enumerate() {
            record.clear();
            record.push(s.to_string());
            record.push(step.to_string());
            record.extend(row.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&record).map_err(io_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::Data(format!("writing sequence CSV: {e}")))?;
    Ok(())
}

/// Parses the sequence CSV format. Sequence ids must run `0, 1, ...` and each
/// sequence must list steps `0..N` in order, with the same `N` throughout.
pub fn read_sequences_csv<R: Read>(reader: R) -> Result<SequenceBatch> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read sequence CSV header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    for (i, expected) in ["sequence_id", "step_index"].iter().enumerate() {
        if names.get(i) != Some(expected) {
            return Err(Error::config(
                format!("csv column {i}"),
                format!("expected `{expected}`, found `{}`", names.get(i).unwrap_or(&"")),
            ));
        }
    }
    let dims = names.len() - 2;
    if dims == 0 {
        return Err(Error::config("csv columns", "no feature columns present"));
    }
    for (j, name) in names[2..].iter().enumerate() {
        let expected = format!("feature_{j}");
        if *name != expected {
            return Err(Error::config(
                format!("csv column {}", j + 2),
                format!("expected `{expected}`, found `{name}`"),
            ));
        }
    }
    let mut data: Vec<f64> = Vec::new();
    let mut seq_len: Option<usize> = None;
    let mut current_id = 0usize;
    let mut current_len = 0usize;
    let mut sequences = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            reason: e.to_string(),
        })?;
        if record.len() != dims + 2 {
            return Err(Error::Parse {
                row,
                column: String::new(),
                reason: format!("expected {} fields, found {}", dims + 2, record.len()),
            });
        }
        let parse_index = |col: usize| -> Result<usize> {
            record[col].trim().parse::<usize>().map_err(|_| Error::Parse {
                row,
                column: names[col].to_string(),
                reason: format!("`{}` is not a non-negative integer", &record[col]),
            })
        };
        let id = parse_index(0)?;
        let step = parse_index(1)?;
        if sequences == 0 && current_len == 0 {
            if id != 0 {
                return Err(Error::Parse {
                    row,
                    column: "sequence_id".into(),
                    reason: "sequence ids must start at 0".into(),
                });
            }
            sequences = 1;
        } else if id == current_id + 1 {
            match seq_len {
                None => seq_len = Some(current_len),
                Some(n) if n != current_len => {
                    return Err(Error::Parse {
                        row,
                        column: "step_index".into(),
                        reason: format!("sequence {current_id} has {current_len} steps, expected {n}"),
                    })
                }
                _ => {}
            }
            current_id = id;
            current_len = 0;
            sequences += 1;
        } else if id != current_id {
            return Err(Error::Parse {
                row,
                column: "sequence_id".into(),
                reason: format!("expected sequence id {current_id} or {}, found {id}", current_id + 1),
            });
        }
        if step != current_len {
            return Err(Error::Parse {
                row,
                column: "step_index".into(),
                reason: format!("expected step {current_len}, found {step}"),
            });
        }
        for j in 0..dims {
            let cell = record[j + 2].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: names[j + 2].to_string(),
                reason: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: names[j + 2].to_string(),
                    reason: "value is not finite".into(),
                });
            }
            data.push(v);
        }
        current_len += 1;
    }
    if sequences == 0 {
        return Err(Error::InsufficientData("sequence CSV has no rows".into()));
    }
    let n = seq_len.unwrap_or(current_len);
    if current_len != n {
        return Err(Error::Parse {
            row: data.len() / dims,
            column: "step_index".into(),
            reason: format!("sequence {current_id} has {current_len} steps, expected {n}"),
        });
    }
    SequenceBatch::from_flat(sequences, n, dims, data)
}

pub fn write_sequences_file(path: &Path, batch: &SequenceBatch) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sequences_csv(std::io::BufWriter::new(file), batch)
}

pub fn read_sequences_file(path: &Path) -> Result<SequenceBatch> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sequences_csv(std::io::BufReader::new(file))
}

/// JSON metadata written next to every sequence CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSidecar {
    pub format_version: u32,
    /// Original column names, in feature order.
    pub columns: Vec<String>,
    pub num_sequences: usize,
    pub seq_len: usize,
    /// Scaler mapping the CSV values (original units) into model space.
    pub scaler: Option<ScalerState>,
    pub window: Option<WindowSpec>,
    pub seed: u64,
    /// What produced the file, e.g. `heldout`, `train`, `samples`.
    pub source: String,
}

pub const SIDECAR_VERSION: u32 = 1;

/// `samples.csv` → `samples.json`
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn write_sidecar(path: &Path, sidecar: &SequenceSidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<SequenceSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sidecar(text.as_bytes())
}

/// Parses and checks a sidecar; the scaler, if any, must be usable.
pub fn parse_sidecar(bytes: &[u8]) -> Result<SequenceSidecar> {
    let sidecar: SequenceSidecar =
        serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("sidecar: {e}")))?;
    if sidecar.format_version != SIDECAR_VERSION {
        return Err(Error::Data(format!("unsupported sidecar version {}", sidecar.format_version)));
    }
    if let Some(scaler) = &sidecar.scaler {
        scaler.validate()?;
        if !sidecar.columns.is_empty() && sidecar.columns.len() != scaler.dims() {
            return Err(Error::Data(format!(
                "sidecar lists {} columns but its scaler has {} features",
                sidecar.columns.len(),
                scaler.dims()
            )));
        }
    }
    Ok(sidecar)
}

/// Generates scaled sine train and held-out sets from one seed.
pub fn sine_corpus(train: usize, heldout: usize, seq_len: usize, dims: usize, seed: u64) -> Result<Corpus> {
    let raw_train = generate_sine(train, seq_len, dims, &mut rng::child(seed, "sine-train", 0))?;
    let raw_heldout = generate_sine(heldout, seq_len, dims, &mut rng::child(seed, "sine-heldout", 0))?;
    let scaler = ScalerState::fit(&raw_train, DEFAULT_RANGE.0, DEFAULT_RANGE.1)?;
    Ok(Corpus {
        train: scale(&raw_train, &scaler)?,
        heldout: scale(&raw_heldout, &scaler)?,
        scaler,
        columns: (0..dims).map(|i| format!("sine_{i}")).collect(),
    })
}
