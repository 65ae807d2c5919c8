//! Post-run analytics: time-to-receive, utilization, binned sandbox power
//! and cross-run aggregation.

use serde::Serialize;
use thiserror::Error;

use crate::facility::AllocPoint;
use crate::protocol::{ColumnActivity, EvTrace, SimOutput, StateChange};
use crate::scenario::{ColumnId, EvId};

/// 9.36 kWh in watt-seconds.
pub const DEFAULT_E_STAR_WS: f64 = 33_696_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty sample set")]
    Empty,
    #[error("state log goes back in time at {0} s")]
    UnorderedLog(f64),
    #[error("cannot aggregate runs of different experiments ({0} and {1})")]
    MixedExperiments(u32, u32),
    #[error("runs disagree on bin layout")]
    MixedBins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsConfig {
    pub e_star_ws: f64,
    pub bin_width_s: f64,
    pub horizon_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { e_star_ws: DEFAULT_E_STAR_WS, bin_width_s: 900.0, horizon_s: 86_400.0 }
    }
}

/// Seconds after arrival until the delivered energy first reaches `e_star_ws`.
///
/// Episodes are piecewise constant, so the crossing is located exactly
/// inside the episode where it happens.
pub fn ttr(trace: &EvTrace, e_star_ws: f64) -> Option<f64> {
    assert!(e_star_ws > 0.0, "reference energy must be positive");
    let slack = 1e-9 * e_star_ws;
    let mut cumulative = 0.0;
    for ep in &trace.episodes {
        let energy = ep.energy_ws();
        if cumulative + energy >= e_star_ws - slack {
            let needed = (e_star_ws - cumulative).max(0.0);
            let crossing = (ep.start_s + needed / ep.watts).min(ep.end_s);
            return Some(crossing - trace.t_arr);
        }
        cumulative += energy;
    }
    None
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `P(X <= t)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= t) as f64 / self.sorted.len() as f64
    }

    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &Ecdf, b: &Ecdf) -> f64 {
    a.samples()
        .iter()
        .chain(b.samples())
        .map(|&t| (a.eval(t) - b.eval(t)).abs())
        .fold(0.0, f64::max)
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

/// Silverman's rule of thumb, falling back to 1.0 for degenerate samples.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return 1.0;
    }
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

pub fn pdf_estimate(samples: &[f64], bandwidth: Option<f64>) -> Result<Kde, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let bandwidth = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    Ok(Kde { samples: samples.to_vec(), bandwidth })
}

impl Kde {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * self.bandwidth * self.samples.len() as f64);
        self.samples
            .iter()
            .map(|s| {
                let z = (x - s) / self.bandwidth;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Utilization {
    pub charge: f64,
    pub handshake: f64,
    pub idle: f64,
}

/// Share of `[0, horizon_s]` spent in each column state.
pub fn utilization(state_log: &[StateChange], horizon_s: f64) -> Result<Utilization, MetricsError> {
    let mut charge = 0.0;
    let mut handshake = 0.0;
    for (k, change) in state_log.iter().enumerate() {
        let end = state_log.get(k + 1).map_or(horizon_s, |n| n.time_s);
        if end < change.time_s {
            return Err(MetricsError::UnorderedLog(end));
        }
        let span = end.min(horizon_s) - change.time_s.min(horizon_s);
        match change.activity {
            ColumnActivity::Charging => charge += span,
            ColumnActivity::Handshake => handshake += span,
            ColumnActivity::Idle => {}
        }
    }
    let charge = charge / horizon_s;
    let handshake = handshake / horizon_s;
    Ok(Utilization { charge, handshake, idle: 1.0 - charge - handshake })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinStat {
    pub start_s: f64,
    pub mean_w: f64,
    pub max_w: f64,
}

/// Time-averaged and peak sandbox allocation per bin of `bin_width_s`.
///
/// Values held for zero time (several changes at one instant) do not
/// contribute to the peak.
pub fn bin_power(trace: &[AllocPoint], bin_width_s: f64, horizon_s: f64) -> Vec<BinStat> {
    let n_bins = (horizon_s / bin_width_s).ceil() as usize;
    let bin_end = |k: usize| ((k + 1) as f64 * bin_width_s).min(horizon_s);
    let mut integral = vec![0.0; n_bins];
    let mut max = vec![f64::NEG_INFINITY; n_bins];
    let mut min = vec![f64::INFINITY; n_bins];

    let mut segments: Vec<(f64, f64, f64)> = Vec::with_capacity(trace.len() + 1);
    let mut cursor = 0.0;
    let mut value = 0.0;
    for p in trace {
        let t = p.time_s.min(horizon_s);
        if t > cursor {
            segments.push((cursor, t, value));
            cursor = t;
        }
        value = p.alloc_watts;
    }
    if horizon_s > cursor {
        segments.push((cursor, horizon_s, value));
    }

    for (start, end, watts) in segments {
        let mut k = ((start / bin_width_s).floor() as usize).min(n_bins - 1);
        let mut t = start;
        while t < end && k < n_bins {
            let piece_end = end.min(bin_end(k));
            if piece_end > t {
                integral[k] += watts * (piece_end - t);
                max[k] = max[k].max(watts);
                min[k] = min[k].min(watts);
            }
            t = piece_end;
            k += 1;
        }
    }

    (0..n_bins)
        .map(|k| {
            let start = k as f64 * bin_width_s;
            let width = bin_end(k) - start;
            let (mean_w, max_w) = if max[k] == f64::NEG_INFINITY {
                (0.0, 0.0)
            } else if min[k] == max[k] {
                (max[k], max[k])
            } else {
                (integral[k] / width, max[k])
            };
            BinStat { start_s: start, mean_w, max_w }
        })
        .collect()
}

/// Linear interpolation between order statistics (R type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvOutcome {
    pub ev: EvId,
    pub column: Option<ColumnId>,
    pub ttr_s: Option<f64>,
    pub sole_occupant: bool,
    pub energy_required_ws: f64,
    pub energy_delivered_ws: f64,
    pub served: bool,
    pub completed: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub exp_id: u32,
    pub replication: u32,
    pub evs: Vec<EvOutcome>,
    pub utilization: Vec<Utilization>,
    pub es_bins: Vec<BinStat>,
    pub served_count: usize,
    pub completion_count: usize,
}

impl RunArtifacts {
    pub fn from_output(output: &SimOutput, exp_id: u32, replication: u32, cfg: &MetricsConfig) -> Self {
        let evs: Vec<EvOutcome> = output
            .evs
            .iter()
            .map(|t| EvOutcome {
                ev: t.ev,
                column: t.column,
                ttr_s: ttr(t, cfg.e_star_ws),
                sole_occupant: output.sole_occupant(t.ev),
                energy_required_ws: t.energy_required_ws,
                energy_delivered_ws: t.energy_delivered_ws,
                served: t.served,
                completed: t.completed,
                cost: t.cost,
            })
            .collect();
        let utilization = output
            .columns
            .iter()
            .map(|c| utilization(&c.state_log, cfg.horizon_s).expect("engine logs are ordered"))
            .collect();
        Self {
            exp_id,
            replication,
            served_count: evs.iter().filter(|e| e.served).count(),
            completion_count: evs.iter().filter(|e| e.completed).count(),
            evs,
            utilization,
            es_bins: bin_power(&output.es_trace, cfg.bin_width_s, cfg.horizon_s),
        }
    }

    pub fn ttr_samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.evs.iter().filter_map(|e| e.ttr_s)
    }

    pub fn mean_utilization(&self) -> Utilization {
        mean_of(&self.utilization)
    }

    pub fn peak_bin_max(&self) -> f64 {
        self.es_bins.iter().map(|b| b.max_w).fold(0.0, f64::max)
    }

    pub fn peak_bin_mean(&self) -> f64 {
        self.es_bins.iter().map(|b| b.mean_w).fold(0.0, f64::max)
    }
}

fn mean_of(us: &[Utilization]) -> Utilization {
    if us.is_empty() {
        return Utilization::default();
    }
    let n = us.len() as f64;
    Utilization {
        charge: us.iter().map(|u| u.charge).sum::<f64>() / n,
        handshake: us.iter().map(|u| u.handshake).sum::<f64>() / n,
        idle: us.iter().map(|u| u.idle).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub start_s: f64,
    pub mean_w: FiveNumber,
    pub max_w: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub exp_id: u32,
    pub runs: usize,
    pub bins: Vec<BinSummary>,
    pub pooled_ttr: Vec<f64>,
    pub utilization: Utilization,
    pub ev_total: usize,
    pub served: usize,
    pub completed: usize,
}

pub fn aggregate_runs(runs: &[RunArtifacts]) -> Result<ExperimentSummary, MetricsError> {
    let first = runs.first().ok_or(MetricsError::Empty)?;
    for r in runs {
        if r.exp_id != first.exp_id {
            return Err(MetricsError::MixedExperiments(first.exp_id, r.exp_id));
        }
        if r.es_bins.len() != first.es_bins.len()
            || r.es_bins.iter().zip(&first.es_bins).any(|(a, b)| a.start_s != b.start_s)
        {
            return Err(MetricsError::MixedBins);
        }
    }
    let bins = first
        .es_bins
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let means: Vec<f64> = runs.iter().map(|r| r.es_bins[k].mean_w).collect();
            let maxes: Vec<f64> = runs.iter().map(|r| r.es_bins[k].max_w).collect();
            Ok(BinSummary { start_s: b.start_s, mean_w: FiveNumber::of(&means)?, max_w: FiveNumber::of(&maxes)? })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let all_columns: Vec<Utilization> = runs.iter().flat_map(|r| r.utilization.iter().copied()).collect();
    Ok(ExperimentSummary {
        exp_id: first.exp_id,
        runs: runs.len(),
        bins,
        pooled_ttr: runs.iter().flat_map(|r| r.ttr_samples()).collect(),
        utilization: mean_of(&all_columns),
        ev_total: runs.iter().map(|r| r.evs.len()).sum(),
        served: runs.iter().map(|r| r.served_count).sum(),
        completed: runs.iter().map(|r| r.completion_count).sum(),
    })
}
