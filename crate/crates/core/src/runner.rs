//! Experiment matrix execution.
//!
//! Every (experiment, replication) pair is an independent run with its own
//! calendar and seed, so the pool may schedule them in any order without
//! changing a single output byte.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facility::AllocPoint;
use crate::metrics::{aggregate_runs, ExperimentSummary, MetricsConfig, MetricsError, RunArtifacts};
use crate::protocol::{simulate, SimError, SimOutput};
use crate::scenario::{ConfigError, RunSeed, ScenarioConfig, Strategy};
use crate::signals::TimeSeries;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiment {exp}, replication {replication}: {source}")]
    Run { exp: u32, replication: u32, source: SimError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRow {
    pub id: u32,
    pub evs: u32,
    pub fcc: u32,
    pub scc: u32,
    pub strategy: Strategy,
}

impl ExperimentRow {
    /// `"FCC"`, `"SCC"` or `"mixed"`.
    pub fn infrastructure(&self) -> &'static str {
        match (self.fcc, self.scc) {
            (_, 0) => "FCC",
            (0, _) => "SCC",
            _ => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub replications: u32,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(rename = "experiment")]
    pub experiments: Vec<ExperimentRow>,
}

/// The twelve workplace configurations, thirty replications each.
pub fn builtin_matrix() -> ExperimentMatrix {
    let mut experiments = Vec::with_capacity(12);
    let mut id = 1;
    for evs in [30, 60, 120] {
        for (fcc, scc) in [(30, 0), (0, 30)] {
            for strategy in [Strategy::Fcfs, Strategy::Shrd] {
                experiments.push(ExperimentRow { id, evs, fcc, scc, strategy });
                id += 1;
            }
        }
    }
    ExperimentMatrix { replications: 30, root_seed: 0, experiments }
}

impl ExperimentMatrix {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut ids: Vec<u32> = self.experiments.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("experiment ids must be unique".into()));
        }
        if self.experiments.iter().any(|e| e.fcc + e.scc == 0) {
            return Err(ConfigError::Invalid("every experiment needs at least one column".into()));
        }
        if self.experiments.is_empty() || self.replications == 0 {
            return Err(ConfigError::Invalid("matrix has no runs".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let m: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("matrix serializes")
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| RunnerError::Io { path: path.display().to_string(), source })?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn total_runs(&self) -> usize {
        self.experiments.len() * self.replications as usize
    }
}

/// Everything shared by the runs of one invocation.
#[derive(Debug, Clone)]
pub struct RunSettings {
    /// Fields not fixed by the matrix row.
    pub base: ScenarioConfig,
    pub e_star_ws: f64,
    pub bin_width_s: f64,
    pub prices: TimeSeries,
    /// Keep each run's full output for trace export.
    pub keep_outputs: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            e_star_ws: crate::metrics::DEFAULT_E_STAR_WS,
            bin_width_s: 900.0,
            prices: default_prices(),
            keep_outputs: false,
        }
    }
}

/// Flat tariff used when no price signal is supplied, per kWh.
pub fn default_prices() -> TimeSeries {
    TimeSeries::constant(0.30)
}

impl RunSettings {
    pub fn scenario(&self, row: &ExperimentRow) -> ScenarioConfig {
        ScenarioConfig {
            ev_count: row.evs,
            fcc_count: row.fcc,
            scc_count: row.scc,
            strategy: row.strategy,
            ..self.base.clone()
        }
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig { e_star_ws: self.e_star_ws, bin_width_s: self.bin_width_s, horizon_s: self.base.horizon_s }
    }
}

pub fn run_experiment(row: &ExperimentRow, settings: &RunSettings, seed: RunSeed) -> Result<RunArtifacts, SimError> {
    run_once(row, settings, seed).map(|(_, a)| a)
}

pub fn run_once(
    row: &ExperimentRow,
    settings: &RunSettings,
    seed: RunSeed,
) -> Result<(SimOutput, RunArtifacts), SimError> {
    let output = simulate(&settings.scenario(row), seed, &settings.prices)?;
    let artifacts = RunArtifacts::from_output(&output, row.id, seed.replication, &settings.metrics());
    Ok((output, artifacts))
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub row: ExperimentRow,
    pub runs: Vec<RunArtifacts>,
    pub summary: ExperimentSummary,
}

#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub experiments: Vec<ExperimentResult>,
    /// Full outputs in (experiment, replication) order, if requested.
    pub outputs: Vec<SimOutput>,
    /// Allocation trace of the first replication of the first experiment.
    pub overlay_trace: Vec<AllocPoint>,
}

pub fn run_matrix(matrix: &ExperimentMatrix, settings: &RunSettings) -> Result<MatrixResult, RunnerError> {
    matrix.validate()?;
    settings.base.validate()?;
    let jobs: Vec<(usize, u32)> = (0..matrix.experiments.len())
        .flat_map(|e| (0..matrix.replications).map(move |r| (e, r)))
        .collect();
    let finished: Vec<(SimOutput, RunArtifacts)> = jobs
        .par_iter()
        .map(|&(e, r)| {
            let row = &matrix.experiments[e];
            let seed = RunSeed::new(matrix.root_seed, row.id, r);
            run_once(row, settings, seed).map_err(|source| RunnerError::Run { exp: row.id, replication: r, source })
        })
        .collect::<Result<_, _>>()?;

    let overlay_trace = finished[0].0.es_trace.clone();
    let (outputs, artifacts): (Vec<SimOutput>, Vec<RunArtifacts>) = finished.into_iter().unzip();
    let reps = matrix.replications as usize;
    let experiments = matrix
        .experiments
        .iter()
        .zip(artifacts.chunks(reps))
        .map(|(row, runs)| {
            Ok(ExperimentResult { row: *row, runs: runs.to_vec(), summary: aggregate_runs(runs)? })
        })
        .collect::<Result<Vec<_>, RunnerError>>()?;
    Ok(MatrixResult {
        experiments,
        outputs: if settings.keep_outputs { outputs } else { Vec::new() },
        overlay_trace,
    })
}
