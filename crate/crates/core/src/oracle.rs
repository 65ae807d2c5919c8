//! Fixed-step reference simulator and engine comparison.
//!
//! Time advances in steps of `dt`. Anything that happens inside
//! `[k·dt, (k+1)·dt)` is handled at the start of step `k`, energy accrues as
//! `watts·dt` per charging step, and a vehicle that fills up part-way
//! through a step is noticed at the start of the next one. The selection,
//! sandbox and port rules are the engine's own; only time handling differs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::facility::{requested_power, EnergySandbox, Grant, PortLedger, RequestId, RequestOutcome, SandboxError, Waiter};
use crate::metrics::ttr;
use crate::protocol::{
    select_fcfs, settle, simulate, ColumnActivity, ColumnTrace, Entity, EvTrace, LogEntry, ShrdCycle, SimError,
    SimOutput, StateChange,
};
use crate::scenario::{build_facility, sample_fleet, ColumnId, ColumnSpec, ConfigError, EvId, EvSpec, RunSeed, ScenarioConfig, Strategy};
use crate::signals::{PowerEpisode, SignalError, TimeSeries};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Engine(#[from] SimError),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("{quantity} = {value} s is not a multiple of dt = {dt} s")]
    Misaligned { quantity: &'static str, value: f64, dt: f64 },
    #[error("horizon {horizon_s} s too short; vehicles still present: {undeparted:?}")]
    HorizonTooShort { horizon_s: f64, undeparted: Vec<EvId> },
    #[error("traces come from different scenarios: {0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    /// Reject handshake and price-interval durations that are not whole steps
    /// instead of rounding them up.
    pub exact: bool,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, exact: false }
    }

    pub fn exact(dt: f64) -> Self {
        Self { dt, exact: true }
    }
}

const ALIGN_TOL: f64 = 1e-9;
const COMPLETION_EPS: f64 = 1e-9;

/// Number of steps covering `value`, or an error if `exact` and it is not a
/// whole number of steps.
fn steps_for(quantity: &'static str, value: f64, step: StepConfig) -> Result<u64, OracleError> {
    let ratio = value / step.dt;
    let nearest = ratio.round();
    if (nearest * step.dt - value).abs() < ALIGN_TOL * value.max(1.0) {
        return Ok(nearest as u64);
    }
    if step.exact {
        return Err(OracleError::Misaligned { quantity, value, dt: step.dt });
    }
    Ok(ratio.ceil() as u64)
}

/// Step whose interval `[k·dt, (k+1)·dt)` contains `t`.
fn step_of(t: f64, dt: f64) -> u64 {
    (t / dt + ALIGN_TOL).floor() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Free,
    AwaitingGrant { ev: EvId, request: RequestId },
    Handshake { ev: EvId, watts: f64, left: u64 },
    Charging { ev: EvId, watts: f64, since: u64, slot_end: Option<u64> },
}

struct Column {
    spec: ColumnSpec,
    phase: Phase,
    last_active: Option<EvId>,
    cycle: ShrdCycle,
    log: Vec<StateChange>,
}

impl Column {
    fn set_activity(&mut self, t: f64, activity: ColumnActivity, ev: Option<EvId>) {
        let last = self.log.last().expect("state log starts non-empty");
        if last.activity != activity || last.ev != ev {
            self.log.push(StateChange { time_s: t, activity, ev });
        }
    }
}

struct Vehicle {
    spec: EvSpec,
    arrival_step: u64,
    departure_step: Option<u64>,
    deadline_step: Option<u64>,
    remaining_ws: f64,
    trace: EvTrace,
}

struct Stepper {
    config: ScenarioConfig,
    seed: RunSeed,
    dt: f64,
    handshake_steps: u64,
    interval_steps: u64,
    sandbox: EnergySandbox,
    ports: PortLedger,
    columns: Vec<Column>,
    vehicles: Vec<Vehicle>,
    prices: TimeSeries,
    log: Vec<LogEntry>,
}

/// Runs the fixed-step reference on a sampled fleet.
pub fn simulate_timestep(
    config: &ScenarioConfig,
    seed: RunSeed,
    prices: &TimeSeries,
    step: StepConfig,
) -> Result<SimOutput, OracleError> {
    let fleet = sample_fleet(config, seed)?;
    simulate_timestep_fleet(config, seed, fleet, prices, step)
}

/// Runs the fixed-step reference on a given fleet.
pub fn simulate_timestep_fleet(
    config: &ScenarioConfig,
    seed: RunSeed,
    fleet: Vec<EvSpec>,
    prices: &TimeSeries,
    step: StepConfig,
) -> Result<SimOutput, OracleError> {
    if !(step.dt > 0.0 && step.dt.is_finite()) {
        return Err(OracleError::BadStep(step.dt));
    }
    let facility = build_facility(config)?;
    let dt = step.dt;
    let s = Stepper {
        config: config.clone(),
        seed,
        dt,
        handshake_steps: steps_for("handshake_s", config.handshake_s, step)?,
        interval_steps: steps_for("price_interval_s", config.price_interval_s, step)?.max(1),
        sandbox: EnergySandbox::new(facility.es_cap_watts),
        ports: PortLedger::new(facility.columns.iter().map(|c| c.ports).collect(), config.placement),
        columns: facility
            .columns
            .into_iter()
            .map(|spec| Column {
                spec,
                phase: Phase::Free,
                last_active: None,
                cycle: ShrdCycle::default(),
                log: vec![StateChange { time_s: 0.0, activity: ColumnActivity::Idle, ev: None }],
            })
            .collect(),
        vehicles: fleet
            .into_iter()
            .map(|spec| Vehicle {
                arrival_step: step_of(spec.arrival(), dt),
                departure_step: None,
                deadline_step: None,
                remaining_ws: spec.energy_required_ws,
                trace: EvTrace::new(spec.id, spec.arrival(), spec.energy_required_ws),
                spec,
            })
            .collect(),
        prices: prices.clone(),
        log: Vec::new(),
    };
    s.run()
}

impl Stepper {
    fn time(&self, k: u64) -> f64 {
        k as f64 * self.dt
    }

    fn note(&mut self, k: u64, entity: Entity, kind: &'static str, detail: String) {
        let t = self.time(k);
        self.log.push(LogEntry { time_s: t, entity, kind, detail });
    }

    fn run(mut self) -> Result<SimOutput, OracleError> {
        let last_step = step_of(self.config.horizon_s, self.dt);
        let mut arrivals: Vec<usize> = (0..self.vehicles.len()).collect();
        arrivals.sort_by(|&a, &b| {
            let (va, vb) = (&self.vehicles[a], &self.vehicles[b]);
            va.spec.arrival().total_cmp(&vb.spec.arrival()).then(a.cmp(&b))
        });
        let mut next_arrival = 0;
        for k in 0..=last_step {
            if next_arrival == arrivals.len() && self.vehicles.iter().all(|v| v.trace.t_leave.is_some()) {
                break;
            }
            self.step_boundaries(k)?;
            self.step_departures(k)?;
            while next_arrival < arrivals.len() && self.vehicles[arrivals[next_arrival]].arrival_step == k {
                self.arrive(EvId(arrivals[next_arrival] as u32), k)?;
                next_arrival += 1;
            }
            self.step_timeouts(k);
            for c in 0..self.columns.len() {
                self.try_start(ColumnId(c as u32), k)?;
            }
            self.accrue();
        }
        let undeparted: Vec<EvId> =
            self.vehicles.iter().filter(|v| v.trace.t_leave.is_none()).map(|v| v.spec.id).collect();
        if !undeparted.is_empty() {
            return Err(OracleError::HorizonTooShort { horizon_s: self.config.horizon_s, undeparted });
        }
        Ok(self.finish())
    }

    fn finish(self) -> SimOutput {
        SimOutput {
            config: self.config,
            seed: self.seed,
            evs: self.vehicles.into_iter().map(|v| v.trace).collect(),
            columns: self
                .columns
                .into_iter()
                .map(|c| ColumnTrace { id: c.spec.id, kind: c.spec.kind, rating_watts: c.spec.rating_watts, state_log: c.log })
                .collect(),
            es_trace: self.sandbox.trace().to_vec(),
            requests: self.sandbox.requests().to_vec(),
            grant_order: self.sandbox.grant_order().to_vec(),
            connections: self.ports.history().to_vec(),
            events: self.log,
        }
    }

    /// Completions, slot ends and finished handshakes due at step `k`.
    fn step_boundaries(&mut self, k: u64) -> Result<(), OracleError> {
        for c in 0..self.columns.len() {
            let col = ColumnId(c as u32);
            match self.columns[c].phase {
                Phase::Handshake { ev, watts, left: 0 } => self.begin_charging(col, ev, watts, k)?,
                Phase::Charging { ev, watts, since, slot_end } => {
                    let v = &self.vehicles[ev.0 as usize];
                    let full = v.remaining_ws <= COMPLETION_EPS * v.spec.energy_required_ws;
                    if full || slot_end == Some(k) {
                        self.close_episode(ev, since, k, watts, full);
                        let (_, grants) = self.sandbox.es_release(col, self.time(k))?;
                        self.columns[c].phase = Phase::Free;
                        let t = self.time(k);
                        self.columns[c].set_activity(t, ColumnActivity::Idle, None);
                        if full {
                            self.columns[c].cycle.remove(ev);
                        }
                        self.note(k, Entity::Column(col), "charge_end", format!("{ev} {}", if full { "complete" } else { "slot" }));
                        self.start_grants(grants, k)?;
                        self.try_start(col, k)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn step_departures(&mut self, k: u64) -> Result<(), OracleError> {
        for i in 0..self.vehicles.len() {
            if self.vehicles[i].departure_step == Some(k) && self.vehicles[i].trace.t_leave.is_none() {
                self.leave(EvId(i as u32), k)?;
            }
        }
        Ok(())
    }

    fn step_timeouts(&mut self, k: u64) {
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if v.deadline_step == Some(k) && v.trace.t_connect.is_none() && v.trace.t_leave.is_none() {
                let ev = v.spec.id;
                if self.ports.renege(ev) {
                    let t = self.time(k);
                    let v = &mut self.vehicles[i];
                    v.trace.t_leave = Some(t);
                    v.trace.served = false;
                    self.note(k, Entity::Ev(ev), "renege", String::new());
                }
            }
        }
    }

    fn arrive(&mut self, ev: EvId, k: u64) -> Result<(), OracleError> {
        let t = self.time(k);
        self.note(k, Entity::Ev(ev), "arrival", String::new());
        match self.ports.try_connect(ev, t)? {
            Some(col) => self.connect(ev, col, k),
            None => {
                let tolerance = self.vehicles[ev.0 as usize].spec.waiting_tolerance_s;
                let deadline = tolerance.map(|tw| t + tw);
                self.ports.enqueue_waiter(Waiter { ev, deadline });
                self.vehicles[ev.0 as usize].deadline_step = deadline.filter(|d| d.is_finite()).map(|d| step_of(d, self.dt));
                self.note(k, Entity::Ev(ev), "wait", String::new());
                Ok(())
            }
        }
    }

    fn connect(&mut self, ev: EvId, col: ColumnId, k: u64) -> Result<(), OracleError> {
        let t = self.time(k);
        let dt = self.dt;
        let v = &mut self.vehicles[ev.0 as usize];
        v.trace.t_connect = Some(t);
        v.trace.column = Some(col);
        v.trace.served = true;
        let stay = v.spec.early_leave_s.map_or(v.spec.parking_duration_s, |e| e.min(v.spec.parking_duration_s));
        // A stay shorter than one step still ends in a later step.
        v.departure_step = Some(step_of(t + stay, dt).max(k + 1));
        let needs_energy = v.remaining_ws > 0.0;
        if self.config.strategy == Strategy::Shrd && needs_energy {
            self.columns[col.0 as usize].cycle.push(ev);
        }
        self.note(k, Entity::Ev(ev), "connect", col.to_string());
        Ok(())
    }

    fn leave(&mut self, ev: EvId, k: u64) -> Result<(), OracleError> {
        let t = self.time(k);
        let col = self.ports.disconnect(ev, t)?;
        let c = col.0 as usize;
        let mut grants = Vec::new();
        let phase = self.columns[c].phase;
        let active = match phase {
            Phase::Free => None,
            Phase::AwaitingGrant { ev, .. } | Phase::Handshake { ev, .. } | Phase::Charging { ev, .. } => Some(ev),
        };
        if active == Some(ev) {
            match phase {
                Phase::AwaitingGrant { request, .. } => grants = self.sandbox.es_cancel(request, t).1,
                Phase::Handshake { .. } => grants = self.sandbox.es_release(col, t)?.1,
                Phase::Charging { watts, since, .. } => {
                    let full = {
                        let v = &self.vehicles[ev.0 as usize];
                        v.remaining_ws <= COMPLETION_EPS * v.spec.energy_required_ws
                    };
                    self.close_episode(ev, since, k, watts, full);
                    grants = self.sandbox.es_release(col, t)?.1;
                }
                Phase::Free => unreachable!(),
            }
            self.columns[c].phase = Phase::Free;
            self.columns[c].set_activity(t, ColumnActivity::Idle, None);
        }
        self.columns[c].cycle.remove(ev);

        let v = &mut self.vehicles[ev.0 as usize];
        v.trace.t_leave = Some(t);
        let (energy, cost) = settle(&v.trace, &self.prices)?;
        v.trace.energy_delivered_ws = energy;
        v.trace.cost = cost;
        self.note(k, Entity::Ev(ev), "leave", String::new());

        self.start_grants(grants, k)?;
        while let Some((waiter, wcol)) = self.ports.admit_waiter(t) {
            self.connect(waiter, wcol, k)?;
            self.try_start(wcol, k)?;
        }
        self.try_start(col, k)
    }

    fn close_episode(&mut self, ev: EvId, since: u64, k: u64, watts: f64, full: bool) {
        let (start, end) = (self.time(since), self.time(k));
        let v = &mut self.vehicles[ev.0 as usize];
        if k > since {
            v.trace.episodes.push(PowerEpisode { start_s: start, end_s: end, watts });
        }
        if full {
            v.remaining_ws = 0.0;
            v.trace.completed = true;
        }
    }

    fn try_start(&mut self, col: ColumnId, k: u64) -> Result<(), OracleError> {
        let c = col.0 as usize;
        if self.columns[c].phase != Phase::Free {
            return Ok(());
        }
        let candidate = match self.config.strategy {
            Strategy::Fcfs => {
                let vehicles = &self.vehicles;
                select_fcfs(
                    self.ports.connected(col).iter().copied().filter(|(ev, _)| vehicles[ev.0 as usize].remaining_ws > 0.0),
                )
            }
            Strategy::Shrd => self.columns[c].cycle.select(),
        };
        let Some(ev) = candidate else {
            return Ok(());
        };
        let watts = requested_power(self.columns[c].spec.rating_watts, self.vehicles[ev.0 as usize].spec.max_accept_watts);
        match self.sandbox.es_request(col, ev, watts, self.time(k))? {
            RequestOutcome::Granted(_) => self.start_granted(col, ev, watts, k),
            RequestOutcome::Queued(request) => {
                self.columns[c].phase = Phase::AwaitingGrant { ev, request };
                Ok(())
            }
        }
    }

    fn start_grants(&mut self, grants: Vec<Grant>, k: u64) -> Result<(), OracleError> {
        for g in grants {
            self.columns[g.column.0 as usize].phase = Phase::Free;
            self.start_granted(g.column, g.ev, g.watts, k)?;
        }
        Ok(())
    }

    fn start_granted(&mut self, col: ColumnId, ev: EvId, watts: f64, k: u64) -> Result<(), OracleError> {
        let c = col.0 as usize;
        let switch = self.columns[c].last_active != Some(ev);
        self.columns[c].last_active = Some(ev);
        if switch && self.handshake_steps > 0 {
            self.columns[c].phase = Phase::Handshake { ev, watts, left: self.handshake_steps };
            let t = self.time(k);
            self.columns[c].set_activity(t, ColumnActivity::Handshake, Some(ev));
            Ok(())
        } else {
            self.begin_charging(col, ev, watts, k)
        }
    }

    fn begin_charging(&mut self, col: ColumnId, ev: EvId, watts: f64, k: u64) -> Result<(), OracleError> {
        let slot_end = match self.config.strategy {
            Strategy::Fcfs => None,
            Strategy::Shrd => Some((k / self.interval_steps + 1) * self.interval_steps),
        };
        let c = col.0 as usize;
        self.columns[c].phase = Phase::Charging { ev, watts, since: k, slot_end };
        let t = self.time(k);
        self.columns[c].set_activity(t, ColumnActivity::Charging, Some(ev));
        Ok(())
    }

    fn accrue(&mut self) {
        for c in 0..self.columns.len() {
            match &mut self.columns[c].phase {
                Phase::Charging { ev, watts, .. } => {
                    self.vehicles[ev.0 as usize].remaining_ws -= *watts * self.dt;
                }
                Phase::Handshake { left, .. } => *left -= 1,
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvDelta {
    pub ev: EvId,
    pub energy_delta_ws: f64,
    /// `None` when neither engine reached the reference energy.
    pub ttr_delta_s: Option<f64>,
    /// Exactly one engine reached the reference energy.
    pub ttr_disagrees: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub dt: f64,
    pub max_rating_watts: f64,
    pub per_ev: Vec<EvDelta>,
    pub peak_delta_w: f64,
    pub event_wall: Option<Duration>,
    pub step_wall: Option<Duration>,
}

impl Comparison {
    pub fn max_energy_delta(&self) -> f64 {
        self.per_ev.iter().map(|d| d.energy_delta_ws.abs()).fold(0.0, f64::max)
    }

    pub fn max_ttr_delta(&self) -> f64 {
        self.per_ev.iter().filter_map(|d| d.ttr_delta_s).map(f64::abs).fold(0.0, f64::max)
    }

    /// `P_max·dt`, the one-step energy bound.
    pub fn energy_bound(&self) -> f64 {
        self.max_rating_watts * self.dt
    }

    /// How many times longer the fixed-step run took.
    pub fn wall_ratio(&self) -> Option<f64> {
        match (self.event_wall, self.step_wall) {
            (Some(e), Some(s)) if e > Duration::ZERO => Some(s.as_secs_f64() / e.as_secs_f64()),
            _ => None,
        }
    }

    pub fn within_bounds(&self) -> bool {
        self.max_energy_delta() <= self.energy_bound() * (1.0 + 1e-9)
            && self.max_ttr_delta() <= self.dt * (1.0 + 1e-9)
            && !self.per_ev.iter().any(|d| d.ttr_disagrees)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), OracleError> {
        let mut text = String::from("ev,energy_delta_ws,ttr_delta_s\n");
        for d in &self.per_ev {
            let ttr = match (d.ttr_delta_s, d.ttr_disagrees) {
                (_, true) => "mismatch".to_string(),
                (Some(v), false) => v.to_string(),
                (None, false) => "NA".to_string(),
            };
            let _ = writeln!(text, "{},{},{}", d.ev.0, d.energy_delta_ws, ttr);
        }
        std::fs::write(path, text).map_err(|source| OracleError::Io { path: path.display().to_string(), source })
    }

    pub fn report(&self) -> String {
        let mut r = String::new();
        let _ = writeln!(r, "dt = {} s, {} vehicles", self.dt, self.per_ev.len());
        let _ = writeln!(
            r,
            "max energy delta = {:.3} Ws (bound P_max*dt = {:.3} Ws)",
            self.max_energy_delta(),
            self.energy_bound()
        );
        let _ = writeln!(r, "max TTR delta = {:.6} s (bound dt = {} s)", self.max_ttr_delta(), self.dt);
        let disagree = self.per_ev.iter().filter(|d| d.ttr_disagrees).count();
        if disagree > 0 {
            let _ = writeln!(r, "vehicles reaching the reference energy in only one engine: {disagree}");
        }
        let _ = writeln!(r, "peak allocation delta = {} W", self.peak_delta_w);
        if let (Some(e), Some(s)) = (self.event_wall, self.step_wall) {
            let _ = writeln!(r, "wall clock: event-driven {:.3} ms, fixed-step {:.3} ms", e.as_secs_f64() * 1e3, s.as_secs_f64() * 1e3);
        }
        if let Some(ratio) = self.wall_ratio() {
            let _ = writeln!(r, "fixed-step / event-driven = {ratio:.1}x");
        }
        let _ = writeln!(r, "{}", if self.within_bounds() { "within bounds" } else { "OUT OF BOUNDS" });
        r
    }
}

/// Per-vehicle differences between an event-driven and a fixed-step run of
/// the same scenario and seed.
pub fn compare_traces(
    event_driven: &SimOutput,
    time_stepped: &SimOutput,
    dt: f64,
    e_star_ws: f64,
) -> Result<Comparison, OracleError> {
    if event_driven.config != time_stepped.config {
        return Err(OracleError::Mismatch("configurations differ".into()));
    }
    if event_driven.seed != time_stepped.seed {
        return Err(OracleError::Mismatch("seeds differ".into()));
    }
    if event_driven.evs.len() != time_stepped.evs.len()
        || event_driven.evs.iter().zip(&time_stepped.evs).any(|(a, b)| a.ev != b.ev || a.energy_required_ws != b.energy_required_ws)
    {
        return Err(OracleError::Mismatch("fleets differ".into()));
    }
    let per_ev = event_driven
        .evs
        .iter()
        .zip(&time_stepped.evs)
        .map(|(a, b)| {
            let (ta, tb) = (ttr(a, e_star_ws), ttr(b, e_star_ws));
            EvDelta {
                ev: a.ev,
                energy_delta_ws: b.energy_delivered_ws - a.energy_delivered_ws,
                ttr_delta_s: ta.zip(tb).map(|(x, y)| y - x),
                ttr_disagrees: ta.is_some() != tb.is_some(),
            }
        })
        .collect();
    let max_rating_watts = event_driven.columns.iter().map(|c| c.rating_watts).fold(0.0, f64::max);
    Ok(Comparison {
        dt,
        max_rating_watts,
        per_ev,
        peak_delta_w: time_stepped.peak_alloc_watts() - event_driven.peak_alloc_watts(),
        event_wall: None,
        step_wall: None,
    })
}

/// Runs both engines on one scenario and compares them, with timings.
pub fn validate(
    config: &ScenarioConfig,
    seed: RunSeed,
    prices: &TimeSeries,
    step: StepConfig,
    e_star_ws: f64,
) -> Result<Comparison, OracleError> {
    let started = Instant::now();
    let event_driven = simulate(config, seed, prices)?;
    let event_wall = started.elapsed();
    let started = Instant::now();
    let time_stepped = simulate_timestep(config, seed, prices, step)?;
    let step_wall = started.elapsed();
    let mut cmp = compare_traces(&event_driven, &time_stepped, step.dt, e_star_ws)?;
    cmp.event_wall = Some(event_wall);
    cmp.step_wall = Some(step_wall);
    Ok(cmp)
}
