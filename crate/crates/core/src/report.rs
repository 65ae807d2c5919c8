//! Figures regenerated from a run's CSV tree.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::export::{self, ExportError};
use crate::metrics::{pdf_estimate, Ecdf, FiveNumber, MetricsError};
use crate::plot::{stack, Chart, PALETTE};
use crate::runner::ExperimentRow;
use crate::signals::{load_series, SignalError, TimeSeries};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("overlay input not found: {0}")]
    MissingOverlayInput(String),
}

/// Price and PV files for the overlay figure. Paths given here must exist;
/// when absent the copies saved next to the run output are used, if any.
#[derive(Debug, Clone, Default)]
pub struct OverlayInputs {
    pub prices: Option<PathBuf>,
    pub pv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportSummary {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn label(row: &ExperimentRow) -> String {
    format!("Exp {}: {} EVs {}", row.id, row.evs, row.strategy)
}

fn save(out: &Path, name: &str, svg: String, summary: &mut ReportSummary) -> Result<(), ReportError> {
    let path = out.join(name);
    std::fs::write(&path, svg).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    summary.written.push(path);
    Ok(())
}

pub fn emit_report(input: &Path, out: &Path, overlay: &OverlayInputs) -> Result<ReportSummary, ReportError> {
    let matrix = export::read_matrix(input)?;
    let ttr = export::read_ttr(input)?;
    let utilization = export::read_utilization(input)?;
    let bins = export::read_bins(input)?;
    std::fs::create_dir_all(out).map_err(|source| ReportError::Io { path: out.display().to_string(), source })?;
    let mut summary = ReportSummary::default();

    let mut pooled: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in &ttr {
        if let Some(v) = r.value() {
            pooled.entry(r.exp).or_default().push(v);
        }
    }
    for infra in ["FCC", "SCC", "mixed"] {
        let rows: Vec<&ExperimentRow> = matrix.experiments.iter().filter(|e| e.infrastructure() == infra).collect();
        if rows.is_empty() {
            continue;
        }
        ttr_figures(infra, &rows, &pooled, out, &mut summary)?;
    }
    utilization_figure(&matrix.experiments, &utilization, out, &mut summary)?;
    power_figures(&matrix.experiments, &bins, out, &mut summary)?;
    overlay_figure(input, overlay, out, &mut summary)?;
    Ok(summary)
}

fn ttr_figures(
    infra: &str,
    rows: &[&ExperimentRow],
    pooled: &BTreeMap<u32, Vec<f64>>,
    out: &Path,
    summary: &mut ReportSummary,
) -> Result<(), ReportError> {
    let series: Vec<(&ExperimentRow, &Vec<f64>)> = rows
        .iter()
        .filter_map(|row| match pooled.get(&row.id) {
            Some(s) if !s.is_empty() => Some((*row, s)),
            _ => {
                summary.warnings.push(format!("experiment {}: no vehicle reached the reference energy", row.id));
                None
            }
        })
        .collect();
    if series.is_empty() {
        summary.warnings.push(format!("{infra}: empty TTR sample set, CDF and density plots skipped"));
        return Ok(());
    }
    let lo = series.iter().flat_map(|(_, s)| s.iter()).copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().flat_map(|(_, s)| s.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(60.0);
    let (x0, x1) = ((lo - pad).max(0.0), hi + pad);
    let tag = infra.to_ascii_lowercase();

    let mut cdf = Chart::new(&format!("TTR CDF, {infra} columns"), "TTR [s]", (x0, x1), "P(TTR <= t)", (0.0, 1.0));
    for (k, (row, samples)) in series.iter().enumerate() {
        let ecdf = Ecdf::new(samples)?;
        let n = ecdf.len() as f64;
        let mut pts = vec![(x0, 0.0)];
        pts.extend(ecdf.samples().iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)));
        cdf.step(&pts, x1, PALETTE[k % PALETTE.len()], Some(&label(row)));
    }
    save(out, &format!("ttr_cdf_{tag}.svg"), cdf.render(), summary)?;

    let grid: Vec<f64> = (0..=400).map(|i| x0 + (x1 - x0) * i as f64 / 400.0).collect();
    let curves: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, s)| {
            let kde = pdf_estimate(s, None)?;
            Ok(grid.iter().map(|&x| (x, kde.density(x))).collect())
        })
        .collect::<Result<_, MetricsError>>()?;
    let top = curves.iter().flatten().map(|p| p.1).fold(0.0, f64::max);
    let mut pdf = Chart::new(&format!("TTR density, {infra} columns"), "TTR [s]", (x0, x1), "density [1/s]", (0.0, top * 1.05));
    for (k, ((row, _), curve)) in series.iter().zip(&curves).enumerate() {
        pdf.line(curve, PALETTE[k % PALETTE.len()], Some(&label(row)));
    }
    save(out, &format!("ttr_pdf_{tag}.svg"), pdf.render(), summary)
}

fn utilization_figure(
    rows: &[ExperimentRow],
    records: &[export::UtilizationRecord],
    out: &Path,
    summary: &mut ReportSummary,
) -> Result<(), ReportError> {
    let n = rows.len() as f64;
    let mut chart = Chart::new("Charging column utilization", "share of time [%]", (0.0, 100.0), "", (0.0, n))
        .size(760.0, 80.0 + 34.0 * n)
        .y_categories(
            rows.iter()
                .enumerate()
                .map(|(k, r)| (n - k as f64 - 0.5, format!("Exp {} {}", r.id, r.infrastructure())))
                .collect(),
        );
    let colors = ["#2ca02c", "#ff7f0e", "#c7c7c7"];
    for (k, row) in rows.iter().enumerate() {
        let mine: Vec<_> = records.iter().filter(|r| r.exp == row.id).collect();
        if mine.is_empty() {
            summary.warnings.push(format!("experiment {}: no utilization rows", row.id));
            continue;
        }
        let m = mine.len() as f64;
        let shares = [
            mine.iter().map(|r| r.charge).sum::<f64>() / m,
            mine.iter().map(|r| r.handshake).sum::<f64>() / m,
            mine.iter().map(|r| r.idle).sum::<f64>() / m,
        ];
        let y = n - k as f64;
        let mut x = 0.0;
        for (share, color) in shares.iter().zip(colors) {
            chart.rect(x, y - 0.85, x + share * 100.0, y - 0.15, color);
            x += share * 100.0;
        }
    }
    for (name, color) in ["charge", "handshake", "idle"].iter().zip(colors) {
        chart.legend(name, color);
    }
    save(out, "utilization.svg", chart.render(), summary)
}

fn power_figures(
    rows: &[ExperimentRow],
    records: &[export::BinRecord],
    out: &Path,
    summary: &mut ReportSummary,
) -> Result<(), ReportError> {
    let mut per_exp: BTreeMap<u32, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut width = f64::INFINITY;
    for r in records {
        per_exp.entry(r.exp).or_default().entry(r.bin_start_s.to_bits()).or_default().push(r.mean_w);
    }
    for bins in per_exp.values() {
        let starts: Vec<f64> = bins.keys().map(|b| f64::from_bits(*b)).collect();
        for w in starts.windows(2) {
            width = width.min(w[1] - w[0]);
        }
    }
    if !width.is_finite() {
        width = 900.0;
    }
    let mut counts: Vec<u32> = rows.iter().map(|r| r.evs).collect();
    counts.sort_unstable();
    counts.dedup();
    for evs in counts {
        let group: Vec<&ExperimentRow> = rows.iter().filter(|r| r.evs == evs).collect();
        let active: Vec<f64> = group
            .iter()
            .filter_map(|r| per_exp.get(&r.id))
            .flat_map(|bins| bins.iter().filter(|(_, v)| v.iter().any(|&w| w > 0.0)).map(|(b, _)| f64::from_bits(*b)))
            .collect();
        if active.is_empty() {
            summary.warnings.push(format!("{evs} EVs: no sandbox power recorded, box plot skipped"));
            continue;
        }
        let first = active.iter().copied().fold(f64::INFINITY, f64::min);
        let last = active.iter().copied().fold(f64::NEG_INFINITY, f64::max) + width;
        let top = group
            .iter()
            .filter_map(|r| per_exp.get(&r.id))
            .flat_map(|b| b.values().flatten())
            .copied()
            .fold(0.0, f64::max);
        let hours = |s: f64| s / 3600.0;
        let mut chart = Chart::new(
            &format!("Energy Sandbox power per 15 min bin, {evs} EVs"),
            "time of day [h]",
            (hours(first), hours(last)),
            "mean power [W]",
            (0.0, top * 1.05),
        )
        .size(980.0, 440.0);
        let slot = width / (group.len() as f64 + 1.0);
        for (k, row) in group.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart.legend(&label(row), color);
            let Some(bins) = per_exp.get(&row.id) else { continue };
            for (start, values) in bins {
                let start = f64::from_bits(*start);
                if start < first || start >= last {
                    continue;
                }
                let centre = start + slot * (k as f64 + 1.0);
                chart.boxplot(hours(centre), hours(slot * 0.4), &FiveNumber::of(values)?, color);
            }
        }
        save(out, &format!("es_power_box_{evs}ev.svg"), chart.render(), summary)?;
    }
    Ok(())
}

fn overlay_source(explicit: &Option<PathBuf>, fallback: PathBuf) -> Result<Option<PathBuf>, ReportError> {
    match explicit {
        Some(p) if !p.exists() => Err(ReportError::MissingOverlayInput(p.display().to_string())),
        Some(p) => Ok(Some(p.clone())),
        None => Ok(fallback.exists().then_some(fallback)),
    }
}

fn overlay_figure(input: &Path, overlay: &OverlayInputs, out: &Path, summary: &mut ReportSummary) -> Result<(), ReportError> {
    let prices = overlay_source(&overlay.prices, input.join("prices.csv"))?;
    let pv = overlay_source(&overlay.pv, input.join("pv.csv"))?;
    let trace_path = input.join("overlay_trace.csv");
    let (Some(prices), Some(pv)) = (prices, pv) else {
        summary.warnings.push("no price and PV signals available, overlay skipped".into());
        return Ok(());
    };
    if !trace_path.exists() {
        return Err(ReportError::MissingOverlayInput(trace_path.display().to_string()));
    }
    let trace = export::read_es_trace(&trace_path)?;
    let prices = load_series(&prices)?;
    let pv = load_series(&pv)?;
    let end = trace
        .last()
        .map(|p| p.time_s)
        .into_iter()
        .chain(prices.breakpoints().last().copied())
        .chain(pv.breakpoints().last().copied())
        .fold(0.0, f64::max)
        .max(3600.0);
    let hours = |s: f64| s / 3600.0;
    let step_points = |series: &TimeSeries| -> Vec<(f64, f64)> {
        series.breakpoints().iter().zip(series.values()).map(|(&t, &v)| (hours(t), v)).collect()
    };
    let span = |vals: &[f64]| (vals.iter().copied().fold(0.0, f64::min), vals.iter().copied().fold(0.0, f64::max) * 1.1);

    let alloc: Vec<(f64, f64)> = trace.iter().map(|p| (hours(p.time_s), p.alloc_watts)).collect();
    let alloc_vals: Vec<f64> = alloc.iter().map(|p| p.1).collect();
    let mut grid = Chart::new("Grid-facing allocation (first run)", "time of day [h]", (0.0, hours(end)), "allocation [W]", span(&alloc_vals)).size(760.0, 260.0);
    grid.step(&alloc, hours(end), PALETTE[0], Some("ES allocation"));
    let mut pv_chart = Chart::new("PV availability", "time of day [h]", (0.0, hours(end)), "PV power [W]", span(pv.values())).size(760.0, 260.0);
    pv_chart.step(&step_points(&pv), hours(end), PALETTE[3], Some("PV"));
    let mut price_chart = Chart::new("Energy price", "time of day [h]", (0.0, hours(end)), "price per kWh", span(prices.values())).size(760.0, 260.0);
    price_chart.step(&step_points(&prices), hours(end), PALETTE[1], Some("price"));
    save(out, "grid_pv_price.svg", stack(&[grid, pv_chart, price_chart]), summary)
}
