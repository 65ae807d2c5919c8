//! Scenario configuration and stochastic fleet sampling.
//!
//! Defaults describe the workplace use case: arrivals between 06:00 and
//! 08:00, a 9–10 kWh energy deficit per vehicle and an 8–9 h parking stay,
//! on a facility of 30 fast columns capped at 1 MW.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{derive_stream, StreamId, StreamPurpose};

/// Watt-seconds per kilowatt-hour.
pub const WS_PER_KWH: f64 = 3_600_000.0;

pub const FCC_WATTS: f64 = 48_000.0;
pub const SCC_WATTS: f64 = 11_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnId(pub u32);

impl fmt::Display for EvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ev{}", self.0)
    }
}

impl fmt::Display for ColumnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cc{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ColumnKind {
    Fcc,
    Scc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    Fcfs,
    Shrd,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Fcfs => "FCFS",
            Strategy::Shrd => "SHRD",
        })
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FCFS" => Ok(Strategy::Fcfs),
            "SHRD" => Ok(Strategy::Shrd),
            other => Err(ConfigError::Invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// How an arriving vehicle picks among columns with a free port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Fewest connected vehicles, lowest column index on ties.
    #[default]
    LeastOccupied,
    /// Lowest column index with a free port.
    FirstFree,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Closed interval `[lo, hi]` in the quantity's base unit.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub ev_count: u32,
    pub fcc_count: u32,
    pub scc_count: u32,
    pub fcc_watts: f64,
    pub scc_watts: f64,
    pub ports_per_column: u32,
    pub strategy: Strategy,
    pub placement: Placement,
    pub es_cap_watts: f64,
    pub arrival_window_s: Range,
    /// Informational; demand is sampled directly from `energy_demand_range_ws`.
    pub commute_km: f64,
    pub energy_demand_range_ws: Range,
    pub parking_range_s: Range,
    /// `None` means vehicles wait indefinitely for a port.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waiting_tolerance_s: Option<f64>,
    pub handshake_s: f64,
    pub price_interval_s: f64,
    pub ev_max_accept_watts: f64,
    pub horizon_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            ev_count: 30,
            fcc_count: 30,
            scc_count: 0,
            fcc_watts: FCC_WATTS,
            scc_watts: SCC_WATTS,
            ports_per_column: 4,
            strategy: Strategy::Fcfs,
            placement: Placement::LeastOccupied,
            es_cap_watts: 1_000_000.0,
            arrival_window_s: [6.0 * 3600.0, 8.0 * 3600.0],
            commute_km: 26.0,
            energy_demand_range_ws: [9.0 * WS_PER_KWH, 10.0 * WS_PER_KWH],
            parking_range_s: [8.0 * 3600.0, 9.0 * 3600.0],
            waiting_tolerance_s: None,
            handshake_s: 32.0,
            price_interval_s: 900.0,
            ev_max_accept_watts: 150_000.0,
            horizon_s: 86_400.0,
        }
    }
}

fn check_range(name: &str, r: Range) -> Result<(), ConfigError> {
    if !(r[0].is_finite() && r[1].is_finite()) {
        return Err(invalid(format!("{name} bounds must be finite")));
    }
    if r[0] > r[1] {
        return Err(invalid(format!("{name}: lo {} > hi {}", r[0], r[1])));
    }
    if r[0] < 0.0 {
        return Err(invalid(format!("{name}: negative lower bound {}", r[0])));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn cc_count(&self) -> u32 {
        self.fcc_count + self.scc_count
    }

    /// Kind of each column: fast columns first, then slow ones.
    pub fn column_kinds(&self) -> Vec<ColumnKind> {
        std::iter::repeat_n(ColumnKind::Fcc, self.fcc_count as usize)
            .chain(std::iter::repeat_n(ColumnKind::Scc, self.scc_count as usize))
            .collect()
    }

    pub fn rating(&self, kind: ColumnKind) -> f64 {
        match kind {
            ColumnKind::Fcc => self.fcc_watts,
            ColumnKind::Scc => self.scc_watts,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cc_count() == 0 {
            return Err(invalid("facility needs at least one charging column"));
        }
        if self.ports_per_column == 0 {
            return Err(invalid("ports_per_column must be at least 1"));
        }
        check_positive("es_cap_watts", self.es_cap_watts)?;
        check_positive("fcc_watts", self.fcc_watts)?;
        check_positive("scc_watts", self.scc_watts)?;
        check_positive("price_interval_s", self.price_interval_s)?;
        check_positive("ev_max_accept_watts", self.ev_max_accept_watts)?;
        check_positive("horizon_s", self.horizon_s)?;
        check_range("arrival_window_s", self.arrival_window_s)?;
        check_range("energy_demand_range_ws", self.energy_demand_range_ws)?;
        check_range("parking_range_s", self.parking_range_s)?;
        if self.arrival_window_s[1] > self.horizon_s {
            return Err(invalid("arrival_window_s must lie within [0, horizon_s]"));
        }
        if !(self.handshake_s.is_finite() && self.handshake_s >= 0.0) {
            return Err(invalid("handshake_s must be finite and nonnegative"));
        }
        if !(self.commute_km.is_finite() && self.commute_km >= 0.0) {
            return Err(invalid("commute_km must be nonnegative"));
        }
        if let Some(tw) = self.waiting_tolerance_s {
            if tw.is_nan() || tw < 0.0 {
                return Err(invalid("waiting_tolerance_s must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Parses a TOML document; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// Sampled parameters of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    pub id: EvId,
    /// Offset from simulation start; the arrival time.
    pub entrance_delay_s: f64,
    pub waiting_tolerance_s: Option<f64>,
    pub parking_duration_s: f64,
    pub energy_required_ws: f64,
    pub max_accept_watts: f64,
    /// Optional leave request, as an offset from connection, earlier than
    /// the end of parking. Never sampled by the built-in scenario.
    pub early_leave_s: Option<f64>,
}

impl EvSpec {
    pub fn arrival(&self) -> f64 {
        self.entrance_delay_s
    }
}

/// Seed coordinates shared by all streams of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunSeed {
    pub root_seed: u64,
    pub experiment: u32,
    pub replication: u32,
}

impl RunSeed {
    pub fn new(root_seed: u64, experiment: u32, replication: u32) -> Self {
        Self { root_seed, experiment, replication }
    }

    pub fn stream(&self, agent: u32, purpose: StreamPurpose) -> crate::kernel::RngStream {
        derive_stream(
            self.root_seed,
            StreamId {
                experiment: self.experiment,
                replication: self.replication,
                agent,
                purpose,
            },
        )
    }
}

/// Draws `ev_count` vehicles, each from its own stream keyed by its id.
pub fn sample_fleet(config: &ScenarioConfig, seed: RunSeed) -> Result<Vec<EvSpec>, ConfigError> {
    config.validate()?;
    let fleet = (0..config.ev_count)
        .map(|i| {
            let mut rng = seed.stream(i, StreamPurpose::EvParameters);
            let [a0, a1] = config.arrival_window_s;
            let [p0, p1] = config.parking_range_s;
            let [e0, e1] = config.energy_demand_range_ws;
            EvSpec {
                id: EvId(i),
                entrance_delay_s: rng.uniform(a0, a1),
                waiting_tolerance_s: config.waiting_tolerance_s,
                parking_duration_s: rng.uniform(p0, p1),
                energy_required_ws: rng.uniform(e0, e1),
                max_accept_watts: config.ev_max_accept_watts,
                early_leave_s: None,
            }
        })
        .collect();
    Ok(fleet)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub id: ColumnId,
    pub kind: ColumnKind,
    pub rating_watts: f64,
    pub ports: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacilitySpec {
    pub columns: Vec<ColumnSpec>,
    pub es_cap_watts: f64,
}

impl FacilitySpec {
    pub fn total_ports(&self) -> u32 {
        self.columns.iter().map(|c| c.ports).sum()
    }
}

pub fn build_facility(config: &ScenarioConfig) -> Result<FacilitySpec, ConfigError> {
    config.validate()?;
    let columns = config
        .column_kinds()
        .into_iter()
        .enumerate()
        .map(|(j, kind)| ColumnSpec {
            id: ColumnId(j as u32),
            kind,
            rating_watts: config.rating(kind),
            ports: config.ports_per_column,
        })
        .collect();
    Ok(FacilitySpec { columns, es_cap_watts: config.es_cap_watts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed() -> RunSeed {
        RunSeed::new(42, 1, 0)
    }

    #[test]
    fn default_fleet_respects_use_case_ranges() {
        let cfg = ScenarioConfig { ev_count: 500, ..Default::default() };
        let fleet = sample_fleet(&cfg, seed()).unwrap();
        assert_eq!(fleet.len(), 500);
        for (i, ev) in fleet.iter().enumerate() {
            assert_eq!(ev.id, EvId(i as u32));
            assert!((21_600.0..=28_800.0).contains(&ev.arrival()));
            assert!((32_400_000.0..=36_000_000.0).contains(&ev.energy_required_ws));
            assert!((28_800.0..=32_400.0).contains(&ev.parking_duration_s));
        }
    }

    #[test]
    fn degenerate_ranges_give_identical_vehicles() {
        let cfg = ScenarioConfig {
            ev_count: 5,
            arrival_window_s: [100.0, 100.0],
            energy_demand_range_ws: [1e6, 1e6],
            parking_range_s: [3600.0, 3600.0],
            ..Default::default()
        };
        let fleet = sample_fleet(&cfg, seed()).unwrap();
        for ev in &fleet {
            assert_eq!(ev.entrance_delay_s, 100.0);
            assert_eq!(ev.energy_required_ws, 1e6);
            assert_eq!(ev.parking_duration_s, 3600.0);
        }
    }

    #[test]
    fn fleet_is_independent_of_column_count() {
        let a = ScenarioConfig { fcc_count: 30, ..Default::default() };
        let b = ScenarioConfig { fcc_count: 3, scc_count: 7, ..Default::default() };
        assert_eq!(sample_fleet(&a, seed()).unwrap(), sample_fleet(&b, seed()).unwrap());
    }

    #[test]
    fn inverted_range_is_rejected() {
        let cfg = ScenarioConfig { parking_range_s: [10.0, 5.0], ..Default::default() };
        assert!(matches!(sample_fleet(&cfg, seed()), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn empirical_mean_demand_near_midpoint() {
        let cfg = ScenarioConfig { ev_count: 20_000, ..Default::default() };
        let fleet = sample_fleet(&cfg, seed()).unwrap();
        let mean = fleet.iter().map(|e| e.energy_required_ws).sum::<f64>() / fleet.len() as f64;
        let mid = 34_200_000.0;
        assert!(((mean - mid) / mid).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn facility_ratings() {
        let fast = build_facility(&ScenarioConfig::default()).unwrap();
        assert_eq!(fast.columns.len(), 30);
        assert!(fast.columns.iter().all(|c| c.rating_watts == 48_000.0));
        assert_eq!(fast.total_ports(), 120);

        let slow = build_facility(&ScenarioConfig { fcc_count: 0, scc_count: 30, ..Default::default() })
            .unwrap();
        assert!(slow.columns.iter().all(|c| c.rating_watts == 11_000.0 && c.kind == ColumnKind::Scc));

        let none = ScenarioConfig { fcc_count: 0, scc_count: 0, ..Default::default() };
        assert!(build_facility(&none).is_err());
    }

    #[test]
    fn toml_round_trip_and_partial_override() {
        let cfg = ScenarioConfig { waiting_tolerance_s: Some(600.0), ..Default::default() };
        let text = cfg.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);

        let partial = ScenarioConfig::from_toml_str("ev_count = 60\nstrategy = \"SHRD\"\n").unwrap();
        assert_eq!(partial.ev_count, 60);
        assert_eq!(partial.strategy, Strategy::Shrd);
        assert_eq!(partial.handshake_s, 32.0);

        assert!(matches!(
            ScenarioConfig::from_toml_str("no_such_field = 1"),
            Err(ConfigError::Parse(_))
        ));
    }
}
