//! Exogenous price and PV signals as right-open step functions.
//!
//! Files are two-column CSV with the header `time_s,value`. Price values
//! are currency per kWh; PV values are watts.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::WS_PER_KWH;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("empty series")]
    Empty,
    #[error("bad header: expected `time_s,value`, found `{0}`")]
    Header(String),
    #[error("unsorted at row {row}: {time} does not follow {previous}")]
    Unsorted { row: usize, time: f64, previous: f64 },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("time {t} precedes first breakpoint {first}")]
    BeforeStart { t: f64, first: f64 },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Constant power over `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEpisode {
    pub start_s: f64,
    pub end_s: f64,
    pub watts: f64,
}

impl PowerEpisode {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn energy_ws(&self) -> f64 {
        self.watts * self.duration()
    }
}

/// `values[k]` holds on `[breakpoints[k], breakpoints[k + 1])`; the last
/// value extends to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, SignalError> {
        if breakpoints.is_empty() {
            return Err(SignalError::Empty);
        }
        if breakpoints.len() != values.len() {
            return Err(SignalError::Row {
                row: breakpoints.len().min(values.len()) + 1,
                message: "breakpoint and value counts differ".into(),
            });
        }
        for (k, pair) in breakpoints.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(SignalError::Unsorted { row: k + 2, time: pair[1], previous: pair[0] });
            }
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self { breakpoints: vec![0.0], values: vec![value] }
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, t: f64) -> Result<usize, SignalError> {
        let first = self.breakpoints[0];
        if t < first || t.is_nan() {
            return Err(SignalError::BeforeStart { t, first });
        }
        // Number of breakpoints <= t, minus one.
        Ok(self.breakpoints.partition_point(|&b| b <= t) - 1)
    }

    pub fn value_at(&self, t: f64) -> Result<f64, SignalError> {
        self.segment(t).map(|k| self.values[k])
    }

    /// `∫ value(t) dt` over `[start, end)`, split exactly at breakpoints.
    pub fn integrate(&self, start: f64, end: f64) -> Result<f64, SignalError> {
        if end <= start {
            return Ok(0.0);
        }
        let mut k = self.segment(start)?;
        let mut t = start;
        let mut acc = 0.0;
        while t < end {
            let seg_end = self.breakpoints.get(k + 1).copied().unwrap_or(f64::INFINITY).min(end);
            acc += self.values[k] * (seg_end - t);
            t = seg_end;
            k += 1;
        }
        Ok(acc)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, SignalError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() != 2 || &header[0] != "time_s" || &header[1] != "value" {
            return Err(SignalError::Header(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| SignalError::Row { row, message: e.to_string() })?;
            if record.len() != 2 {
                return Err(SignalError::Row { row, message: format!("expected 2 cells, found {}", record.len()) });
            }
            let parse = |cell: &str| -> Result<f64, SignalError> {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SignalError::Row { row, message: format!("non-numeric cell {cell:?}") })
            };
            let time = parse(&record[0])?;
            let value = parse(&record[1])?;
            if let Some(&previous) = breakpoints.last() {
                if time <= previous {
                    return Err(SignalError::Unsorted { row, time, previous });
                }
            }
            breakpoints.push(time);
            values.push(value);
        }
        if breakpoints.is_empty() {
            return Err(SignalError::Empty);
        }
        Ok(Self { breakpoints, values })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), SignalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "value"])?;
        for (t, v) in self.breakpoints.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

pub fn load_series(path: &Path) -> Result<TimeSeries, SignalError> {
    let file = std::fs::File::open(path)
        .map_err(|source| SignalError::Io { path: path.display().to_string(), source })?;
    TimeSeries::from_reader(file)
}

/// Index of the interval `[k·width, (k+1)·width)` containing `t`.
pub fn interval_index(t: f64, width_s: f64) -> u64 {
    debug_assert!(t >= 0.0 && width_s > 0.0);
    (t / width_s).floor() as u64
}

/// Start of the first interval boundary strictly after `t`.
pub fn next_boundary(t: f64, width_s: f64) -> f64 {
    let mut b = (interval_index(t, width_s) + 1) as f64 * width_s;
    // Guards against t/width rounding down just below an exact boundary.
    while b <= t {
        b += width_s;
    }
    b
}

/// Cost of the given episodes at a price series in currency per kWh.
pub fn energy_cost(episodes: &[PowerEpisode], prices: &TimeSeries) -> Result<f64, SignalError> {
    let mut total = 0.0;
    for ep in episodes {
        total += ep.watts * prices.integrate(ep.start_s, ep.end_s)?;
    }
    Ok(total / WS_PER_KWH)
}
