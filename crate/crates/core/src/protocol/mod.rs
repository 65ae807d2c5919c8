//! Vehicle lifecycle, column operation and the two selection strategies.
//!
//! A column charges at most one vehicle at a time. Switching the active
//! vehicle costs a handshake during which the column holds its sandbox
//! allocation but delivers no energy. Under FCFS the earliest-connected
//! vehicle charges until it is full or leaves; under SHRD the column
//! rotates through its vehicles at every price-interval boundary.

mod engine;
mod selection;

use std::fmt;

use serde::Serialize;

use crate::facility::{AllocPoint, Connection, PowerRequest, RequestId};
use crate::scenario::{ColumnId, ColumnKind, EvId, RunSeed, ScenarioConfig};
use crate::signals::{energy_cost, PowerEpisode, SignalError, TimeSeries};

pub use engine::{simulate, SimError, Simulation};
pub use selection::{select_fcfs, select_shrd, ShrdCycle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ColumnActivity {
    Idle,
    Handshake,
    Charging,
}

impl fmt::Display for ColumnActivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnActivity::Idle => "idle",
            ColumnActivity::Handshake => "handshake",
            ColumnActivity::Charging => "charge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateChange {
    pub time_s: f64,
    pub activity: ColumnActivity,
    pub ev: Option<EvId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnTrace {
    pub id: ColumnId,
    pub kind: ColumnKind,
    pub rating_watts: f64,
    /// Starts with `Idle` at time zero; times are nondecreasing.
    pub state_log: Vec<StateChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvTrace {
    pub ev: EvId,
    pub t_arr: f64,
    pub t_connect: Option<f64>,
    pub column: Option<ColumnId>,
    pub energy_required_ws: f64,
    pub episodes: Vec<PowerEpisode>,
    pub energy_delivered_ws: f64,
    pub t_leave: Option<f64>,
    pub served: bool,
    /// Whether the vehicle received its full demand.
    pub completed: bool,
    pub cost: f64,
}

impl EvTrace {
    pub fn new(ev: EvId, t_arr: f64, energy_required_ws: f64) -> Self {
        Self {
            ev,
            t_arr,
            t_connect: None,
            column: None,
            energy_required_ws,
            episodes: Vec::new(),
            energy_delivered_ws: 0.0,
            t_leave: None,
            served: false,
            completed: false,
            cost: 0.0,
        }
    }
}

/// Delivered energy and its cost at the given tariff.
pub fn settle(trace: &EvTrace, prices: &TimeSeries) -> Result<(f64, f64), SignalError> {
    let energy = trace.episodes.iter().map(PowerEpisode::energy_ws).sum();
    Ok((energy, energy_cost(&trace.episodes, prices)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Entity {
    Ev(EvId),
    Column(ColumnId),
    Sandbox,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Ev(e) => e.fmt(f),
            Entity::Column(c) => c.fmt(f),
            Entity::Sandbox => f.write_str("es"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub time_s: f64,
    pub entity: Entity,
    pub kind: &'static str,
    pub detail: String,
}

/// Everything a run produces, in the schema shared by the event-driven
/// engine and the time-stepped reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutput {
    #[serde(skip)]
    pub config: ScenarioConfig,
    #[serde(skip)]
    pub seed: RunSeed,
    pub evs: Vec<EvTrace>,
    pub columns: Vec<ColumnTrace>,
    pub es_trace: Vec<AllocPoint>,
    pub requests: Vec<PowerRequest>,
    pub grant_order: Vec<RequestId>,
    pub connections: Vec<Connection>,
    pub events: Vec<LogEntry>,
}

impl SimOutput {
    pub fn peak_alloc_watts(&self) -> f64 {
        self.es_trace.iter().map(|p| p.alloc_watts).fold(0.0, f64::max)
    }

    /// Whether no other vehicle shared `ev`'s column while it was connected.
    pub fn sole_occupant(&self, ev: EvId) -> bool {
        let Some(own) = self.connections.iter().find(|c| c.ev == ev) else {
            return false;
        };
        let own_end = own.disconnect_s.unwrap_or(f64::INFINITY);
        !self.connections.iter().any(|c| {
            c.ev != ev
                && c.column == own.column
                && c.connect_s < own_end
                && c.disconnect_s.unwrap_or(f64::INFINITY) > own.connect_s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settle_examples() {
        let flat = TimeSeries::constant(0.30);
        let mut trace = EvTrace::new(EvId(0), 0.0, 33_696_000.0);
        assert_eq!(settle(&trace, &flat).unwrap(), (0.0, 0.0));

        trace.episodes.push(PowerEpisode { start_s: 32.0, end_s: 734.0, watts: 48_000.0 });
        let (e, cost) = settle(&trace, &flat).unwrap();
        assert_eq!(e, 33_696_000.0);
        assert!((cost - 2.808).abs() < 1e-12);

        let step = TimeSeries::new(vec![0.0, 500.0], vec![0.30, 0.10]).unwrap();
        let (_, whole) = settle(&trace, &step).unwrap();
        let split = 48_000.0 * (468.0 * 0.30 + 234.0 * 0.10) / 3_600_000.0;
        assert!((whole - split).abs() < 1e-12);
    }
}
