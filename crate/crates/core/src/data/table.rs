use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

pub const TIME_COLUMN: &str = "time_ms";

/// Multichannel recording on a uniform millisecond time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingTable {
    time_ms: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

/// Columns to read from a delimited file. An empty `columns` list loads
/// every non-time column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub time_column: String,
    pub columns: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { time_column: TIME_COLUMN.into(), columns: Vec::new() }
    }
}

fn check_time(time: &[f64]) -> Result<(), DataError> {
    if time.is_empty() {
        return Err(DataError::Empty);
    }
    let expected = if time.len() > 1 { time[1] - time[0] } else { 0.0 };
    for i in 1..time.len() {
        let delta = time[i] - time[i - 1];
        // data rows are reported 1-based
        if delta.is_nan() || delta <= 0.0 {
            return Err(DataError::NonMonotoneTime { row: i + 1 });
        }
        if (delta - expected).abs() > 1e-6 * expected.max(1.0) {
            return Err(DataError::IrregularSampling { row: i + 1, delta, expected });
        }
    }
    Ok(())
}

impl RecordingTable {
    pub fn new(time_ms: Vec<f64>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        check_time(&time_ms)?;
        if names.len() != columns.len() {
            return Err(Error::Usage(format!("{} names for {} columns", names.len(), columns.len())));
        }
        for (n, c) in names.iter().zip(&columns) {
            if c.len() != time_ms.len() {
                return Err(DataError::ChannelMismatch(format!(
                    "column `{n}` has {} rows, time has {}",
                    c.len(),
                    time_ms.len()
                ))
                .into());
            }
        }
        Ok(RecordingTable { time_ms, names, columns })
    }

    pub fn len(&self) -> usize {
        self.time_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_ms.is_empty()
    }

    pub fn time_ms(&self) -> &[f64] {
        &self.time_ms
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_channels(&self) -> usize {
        self.columns.len()
    }

    /// `None` for single-row tables.
    pub fn sample_rate_hz(&self) -> Option<f64> {
        (self.len() > 1).then(|| 1000.0 / (self.time_ms[1] - self.time_ms[0]))
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::MissingColumn(name.into()))
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(String::as_str).zip(self.columns.iter().map(Vec::as_slice))
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start >= rows.end || rows.end > self.len() {
            return Err(DataError::TooShort { len: self.len(), needed: rows.end }.into());
        }
        RecordingTable::new(
            self.time_ms[rows.clone()].to_vec(),
            self.names.clone(),
            self.columns.iter().map(|c| c[rows.clone()].to_vec()).collect(),
        )
    }

    pub fn select(&self, names: &[String]) -> Result<Self> {
        let columns = names.iter().map(|n| self.column(n).map(<[f64]>::to_vec)).collect::<Result<Vec<_>, _>>()?;
        RecordingTable::new(self.time_ms.clone(), names.to_vec(), columns)
    }

    pub(crate) fn map_columns(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Self {
        RecordingTable {
            time_ms: self.time_ms.clone(),
            names: self.names.clone(),
            columns: self.columns.iter().enumerate().map(|(i, c)| f(i, c)).collect(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RecordingTable> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<RecordingTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(DataError::from)?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.into()));
    let time_idx = find(&schema.time_column)?;
    let wanted: Vec<String> = if schema.columns.is_empty() {
        header.iter().filter(|h| **h != schema.time_column).cloned().collect()
    } else {
        schema.columns.clone()
    };
    let idx = wanted.iter().map(|n| find(n)).collect::<Result<Vec<_>, _>>()?;

    let mut time = Vec::new();
    let mut columns = vec![Vec::new(); wanted.len()];
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(DataError::from)?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow { row, expected: header.len(), found: record.len() }.into());
        }
        let parse = |i: usize, name: &str| -> Result<f64, DataError> {
            let cell = record[i].trim();
            cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::NonNumeric {
                row,
                column: name.into(),
                value: cell.into(),
            })
        };
        let t = parse(time_idx, &schema.time_column)?;
        if let Some(&prev) = time.last() {
            if t <= prev {
                return Err(DataError::NonMonotoneTime { row }.into());
            }
        }
        time.push(t);
        for (c, (&i, name)) in idx.iter().zip(&wanted).enumerate() {
            columns[c].push(parse(i, name)?);
        }
    }
    RecordingTable::new(time, wanted, columns)
}

pub fn write_csv<W: Write>(table: &RecordingTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![TIME_COLUMN.to_string()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header).map_err(DataError::from)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..table.len() {
        row.clear();
        row.push(table.time_ms[i].to_string());
        row.extend(table.columns.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(DataError::from)?;
    }
    w.flush()?;
    Ok(())
}

fn interpolate(time: &[f64], values: &[f64], t: f64) -> f64 {
    let j = time.partition_point(|&x| x <= t);
    if j == 0 {
        return values[0];
    }
    if j >= time.len() {
        return values[time.len() - 1];
    }
    let (t0, t1) = (time[j - 1], time[j]);
    let frac = (t - t0) / (t1 - t0);
    values[j - 1] + frac * (values[j] - values[j - 1])
}

fn grid(start: f64, end: f64, rate_hz: f64) -> Vec<f64> {
    let step = 1000.0 / rate_hz;
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start + i as f64 * step).collect()
}

fn check_upsample(table: &RecordingTable, target_hz: f64) -> Result<()> {
    if table.is_empty() {
        return Err(DataError::Empty.into());
    }
    if target_hz.is_nan() || target_hz <= 0.0 {
        return Err(Error::Config(format!("target rate {target_hz} Hz must be positive")));
    }
    if let Some(src) = table.sample_rate_hz() {
        if target_hz < src * (1.0 - 1e-9) {
            return Err(DataError::Downsample { source_hz: src, target_hz }.into());
        }
    }
    Ok(())
}

/// Linear interpolation onto a `target_hz` grid starting at the first sample;
/// timestamps outside the source range take the nearest endpoint value.
pub fn resample_linear(table: &RecordingTable, target_hz: f64) -> Result<RecordingTable> {
    check_upsample(table, target_hz)?;
    let t = grid(table.time_ms[0], *table.time_ms.last().expect("non-empty"), target_hz);
    resample_at(table, t)
}

fn resample_at(table: &RecordingTable, t: Vec<f64>) -> Result<RecordingTable> {
    let columns =
        table.columns.iter().map(|c| t.iter().map(|&x| interpolate(&table.time_ms, c, x)).collect()).collect();
    RecordingTable::new(t, table.names.clone(), columns)
}

/// Resamples several tables onto one `target_hz` grid spanning their common
/// time range and concatenates their channels.
pub fn align_tables(tables: &[RecordingTable], target_hz: f64) -> Result<RecordingTable> {
    let first = tables.first().ok_or(DataError::Empty)?;
    for t in tables {
        check_upsample(t, target_hz)?;
    }
    let start = tables.iter().map(|t| t.time_ms[0]).fold(first.time_ms[0], f64::max);
    let end = tables.iter().map(|t| *t.time_ms.last().expect("non-empty")).fold(f64::INFINITY, f64::min);
    if end < start {
        return Err(DataError::Empty.into());
    }
    let t = grid(start, end, target_hz);
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for table in tables {
        let r = resample_at(table, t.clone())?;
        names.extend(r.names);
        columns.extend(r.columns);
    }
    RecordingTable::new(t, names, columns)
}
