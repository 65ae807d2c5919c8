//! CSV output tree of a matrix run, and readers for the parts the report needs.
//!
//! ```text
//! out/
//!   matrix.toml  config.toml
//!   ttr.csv  utilization.csv  es_power_bins.csv  summary.csv
//!   overlay_trace.csv  [prices.csv  pv.csv]
//!   runs/exp{id}/rep{k}/{es_trace,grants,events}.csv   (with traces only)
//! ```
//!
//! The `seed` column holds the replication index; the full seed of a run is
//! `(root_seed, exp, seed)` with `root_seed` taken from `matrix.toml`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facility::{AllocPoint, PowerRequest, RequestState};
use crate::protocol::{LogEntry, SimOutput};
use crate::runner::{ExperimentMatrix, MatrixResult};
use crate::scenario::ScenarioConfig;
use crate::signals::TimeSeries;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv { path: path.display().to_string(), source }
}

fn writer(path: &Path) -> Result<csv::Writer<File>, ExportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(csv::Writer::from_writer(File::create(path).map_err(io_err(path))?))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExportError> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Like [`write_rows`] but writes the header even when there are no rows.
fn write_table<const N: usize>(path: &Path, header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Result<(), ExportError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtrRecord {
    pub exp: u32,
    pub seed: u32,
    pub ev: u32,
    /// Seconds, or `NA` when the vehicle never reached the reference energy.
    pub ttr_s: String,
}

impl TtrRecord {
    pub fn value(&self) -> Option<f64> {
        self.ttr_s.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRecord {
    pub exp: u32,
    pub seed: u32,
    pub column: u32,
    pub charge: f64,
    pub handshake: f64,
    pub idle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub exp: u32,
    pub seed: u32,
    pub bin_start_s: f64,
    pub mean_w: f64,
    pub max_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub exp: u32,
    pub evs: u32,
    pub fcc: u32,
    pub scc: u32,
    pub strategy: String,
    pub runs: usize,
    pub ev_total: usize,
    pub served: usize,
    pub completed: usize,
    pub ttr_samples: usize,
    pub ttr_median_s: String,
    pub charge: f64,
    pub handshake: f64,
    pub idle: f64,
    pub peak_bin_max_median_w: f64,
    pub peak_bin_mean_median_w: f64,
}

pub fn write_es_trace(path: &Path, trace: &[AllocPoint]) -> Result<(), ExportError> {
    write_table(path, ["time_s", "alloc_watts"], trace.iter().map(|p| [p.time_s.to_string(), p.alloc_watts.to_string()]))
}

pub fn read_es_trace(path: &Path) -> Result<Vec<AllocPoint>, ExportError> {
    #[derive(Deserialize)]
    struct Row {
        time_s: f64,
        alloc_watts: f64,
    }
    Ok(read_rows::<Row>(path)?.into_iter().map(|r| AllocPoint { time_s: r.time_s, alloc_watts: r.alloc_watts }).collect())
}

pub fn write_grant_log(path: &Path, requests: &[PowerRequest]) -> Result<(), ExportError> {
    let rows = requests.iter().map(|r| {
        let (at, state) = match r.state {
            RequestState::Pending => (String::new(), "pending"),
            RequestState::Granted { at } => (at.to_string(), "granted"),
            RequestState::Cancelled { at } => (at.to_string(), "cancelled"),
        };
        [r.id.0.to_string(), r.column.0.to_string(), r.ev.0.to_string(), r.watts.to_string(), r.t_req.to_string(), at, state.to_string()]
    });
    write_table(path, ["request_id", "column", "ev", "watts", "t_req", "t_grant_or_cancel", "state"], rows)
}

pub fn write_event_log(path: &Path, events: &[LogEntry]) -> Result<(), ExportError> {
    write_table(
        path,
        ["time_s", "entity", "kind", "detail"],
        events.iter().map(|e| [e.time_s.to_string(), e.entity.to_string(), e.kind.to_string(), e.detail.clone()]),
    )
}

pub fn write_series(path: &Path, series: &TimeSeries) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    series.write_csv(file).map_err(|e| ExportError::Format { path: path.display().to_string(), message: e.to_string() })
}

fn write_text(path: &Path, text: &str) -> Result<(), ExportError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Directory holding the per-run traces of `(exp, replication)`.
pub fn run_dir(out: &Path, exp: u32, replication: u32) -> PathBuf {
    out.join("runs").join(format!("exp{exp}")).join(format!("rep{replication}"))
}

pub fn write_run_traces(dir: &Path, output: &SimOutput) -> Result<(), ExportError> {
    write_es_trace(&dir.join("es_trace.csv"), &output.es_trace)?;
    write_grant_log(&dir.join("grants.csv"), &output.requests)?;
    write_event_log(&dir.join("events.csv"), &output.events)
}

fn median_or_na(samples: &[f64]) -> String {
    if samples.is_empty() {
        return "NA".into();
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    crate::metrics::quantile_sorted(&s, 0.5).to_string()
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    crate::metrics::quantile_sorted(&v, 0.5)
}

/// Writes the full CSV tree of a matrix run into `out`.
pub fn write_results(
    out: &Path,
    matrix: &ExperimentMatrix,
    base: &ScenarioConfig,
    result: &MatrixResult,
) -> Result<(), ExportError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(&out.join("matrix.toml"), &matrix.to_toml_string())?;
    write_text(&out.join("config.toml"), &base.to_toml_string())?;

    let runs = || result.experiments.iter().flat_map(|e| e.runs.iter());
    write_table(
        &out.join("ttr.csv"),
        ["exp", "seed", "ev", "ttr_s"],
        runs().flat_map(|r| {
            r.evs.iter().map(move |e| {
                [
                    r.exp_id.to_string(),
                    r.replication.to_string(),
                    e.ev.0.to_string(),
                    e.ttr_s.map_or_else(|| "NA".to_string(), |v| v.to_string()),
                ]
            })
        }),
    )?;
    write_rows(
        &out.join("utilization.csv"),
        runs().flat_map(|r| {
            r.utilization.iter().enumerate().map(move |(c, u)| UtilizationRecord {
                exp: r.exp_id,
                seed: r.replication,
                column: c as u32,
                charge: u.charge,
                handshake: u.handshake,
                idle: u.idle,
            })
        }),
    )?;
    write_rows(
        &out.join("es_power_bins.csv"),
        runs().flat_map(|r| {
            r.es_bins.iter().map(move |b| BinRecord {
                exp: r.exp_id,
                seed: r.replication,
                bin_start_s: b.start_s,
                mean_w: b.mean_w,
                max_w: b.max_w,
            })
        }),
    )?;
    write_rows(
        &out.join("summary.csv"),
        result.experiments.iter().map(|e| SummaryRecord {
            exp: e.row.id,
            evs: e.row.evs,
            fcc: e.row.fcc,
            scc: e.row.scc,
            strategy: e.row.strategy.to_string(),
            runs: e.summary.runs,
            ev_total: e.summary.ev_total,
            served: e.summary.served,
            completed: e.summary.completed,
            ttr_samples: e.summary.pooled_ttr.len(),
            ttr_median_s: median_or_na(&e.summary.pooled_ttr),
            charge: e.summary.utilization.charge,
            handshake: e.summary.utilization.handshake,
            idle: e.summary.utilization.idle,
            peak_bin_max_median_w: median(e.runs.iter().map(|r| r.peak_bin_max())),
            peak_bin_mean_median_w: median(e.runs.iter().map(|r| r.peak_bin_mean())),
        }),
    )?;
    write_es_trace(&out.join("overlay_trace.csv"), &result.overlay_trace)?;
    for output in &result.outputs {
        write_run_traces(&run_dir(out, output.seed.experiment, output.seed.replication), output)?;
    }
    Ok(())
}

pub fn read_matrix(dir: &Path) -> Result<ExperimentMatrix, ExportError> {
    let path = dir.join("matrix.toml");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    ExperimentMatrix::from_toml_str(&text).map_err(|e| ExportError::Format { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_ttr(dir: &Path) -> Result<Vec<TtrRecord>, ExportError> {
    let path = dir.join("ttr.csv");
    let rows: Vec<TtrRecord> = read_rows(&path)?;
    if let Some(bad) = rows.iter().find(|r| r.ttr_s != "NA" && r.value().is_none()) {
        return Err(ExportError::Format { path: path.display().to_string(), message: format!("bad ttr_s {:?}", bad.ttr_s) });
    }
    Ok(rows)
}

pub fn read_utilization(dir: &Path) -> Result<Vec<UtilizationRecord>, ExportError> {
    read_rows(&dir.join("utilization.csv"))
}

pub fn read_bins(dir: &Path) -> Result<Vec<BinRecord>, ExportError> {
    read_rows(&dir.join("es_power_bins.csv"))
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRecord>, ExportError> {
    read_rows(&dir.join("summary.csv"))
}
