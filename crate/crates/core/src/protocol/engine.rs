use thiserror::Error;

use super::{
    select_fcfs, ColumnActivity, ColumnTrace, Entity, EvTrace, LogEntry, ShrdCycle, SimOutput,
    StateChange,
};
use crate::facility::{
    requested_power, EnergySandbox, Grant, PortLedger, RequestId, RequestOutcome, SandboxError, Waiter,
};
use crate::kernel::{Calendar, EventId, KernelError, SimTime};
use crate::scenario::{
    build_facility, sample_fleet, ColumnId, ColumnSpec, ConfigError, EvId, EvSpec, RunSeed,
    ScenarioConfig, Strategy,
};
use crate::signals::{next_boundary, PowerEpisode, SignalError, TimeSeries};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("horizon {horizon_s} s too short; vehicles still present: {undeparted:?}")]
    HorizonTooShort { horizon_s: f64, undeparted: Vec<EvId> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Arrival(EvId),
    WaitExpired(EvId),
    Leave(EvId),
    HandshakeDone(ColumnId),
    ChargeEnd(ColumnId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Free,
    AwaitingGrant { ev: EvId, request: RequestId },
    Handshake { ev: EvId, watts: f64, done: EventId },
    Charging { ev: EvId, watts: f64, since: f64, end: EventId, completes: bool },
}

impl Phase {
    fn ev(&self) -> Option<EvId> {
        match *self {
            Phase::Free => None,
            Phase::AwaitingGrant { ev, .. } | Phase::Handshake { ev, .. } | Phase::Charging { ev, .. } => Some(ev),
        }
    }
}

struct ColumnState {
    spec: ColumnSpec,
    phase: Phase,
    last_active: Option<EvId>,
    cycle: ShrdCycle,
    log: Vec<StateChange>,
}

impl ColumnState {
    fn set_activity(&mut self, t: f64, activity: ColumnActivity, ev: Option<EvId>) {
        let last = self.log.last().expect("state log starts non-empty");
        if last.activity == activity && last.ev == ev {
            return;
        }
        debug_assert!(t >= last.time_s);
        self.log.push(StateChange { time_s: t, activity, ev });
    }
}

struct Vehicle {
    spec: EvSpec,
    remaining_ws: f64,
    wait_event: Option<EventId>,
    trace: EvTrace,
}

/// One event-driven simulation run.
pub struct Simulation {
    config: ScenarioConfig,
    seed: RunSeed,
    calendar: Calendar<Event>,
    sandbox: EnergySandbox,
    ports: PortLedger,
    columns: Vec<ColumnState>,
    vehicles: Vec<Vehicle>,
    prices: TimeSeries,
    log: Vec<LogEntry>,
}

/// Energy below this fraction of the demand counts as delivered.
const COMPLETION_EPS: f64 = 1e-9;

impl Simulation {
    pub fn new(
        config: &ScenarioConfig,
        seed: RunSeed,
        fleet: Vec<EvSpec>,
        prices: TimeSeries,
    ) -> Result<Self, SimError> {
        let facility = build_facility(config)?;
        let ports = PortLedger::new(facility.columns.iter().map(|c| c.ports).collect(), config.placement);
        let columns = facility
            .columns
            .into_iter()
            .map(|spec| ColumnState {
                spec,
                phase: Phase::Free,
                last_active: None,
                cycle: ShrdCycle::default(),
                log: vec![StateChange { time_s: 0.0, activity: ColumnActivity::Idle, ev: None }],
            })
            .collect();
        let mut calendar = Calendar::new();
        let mut vehicles = Vec::with_capacity(fleet.len());
        for (i, spec) in fleet.into_iter().enumerate() {
            assert_eq!(spec.id, EvId(i as u32), "fleet must be ordered by id");
            calendar.schedule(SimTime::from_secs(spec.arrival()), Event::Arrival(spec.id))?;
            vehicles.push(Vehicle {
                remaining_ws: spec.energy_required_ws,
                wait_event: None,
                trace: EvTrace::new(spec.id, spec.arrival(), spec.energy_required_ws),
                spec,
            });
        }
        Ok(Self {
            config: config.clone(),
            seed,
            calendar,
            sandbox: EnergySandbox::new(facility.es_cap_watts),
            ports,
            columns,
            vehicles,
            prices,
            log: Vec::new(),
        })
    }

    fn note(&mut self, t: f64, entity: Entity, kind: &'static str, detail: String) {
        self.log.push(LogEntry { time_s: t, entity, kind, detail });
    }

    fn schedule(&mut self, at: f64, event: Event) -> Result<EventId, SimError> {
        Ok(self.calendar.schedule(SimTime::from_secs(at), event)?)
    }

    pub fn run(mut self) -> Result<SimOutput, SimError> {
        let horizon = self.config.horizon_s;
        while let Some(next) = self.calendar.peek_time() {
            if next.secs() > horizon {
                break;
            }
            let (at, _, event) = self.calendar.advance().expect("peeked event exists");
            let t = at.secs();
            match event {
                Event::Arrival(ev) => self.on_arrival(ev, t)?,
                Event::WaitExpired(ev) => self.on_wait_expired(ev, t)?,
                Event::Leave(ev) => self.on_leave(ev, t)?,
                Event::HandshakeDone(col) => self.on_handshake_done(col, t)?,
                Event::ChargeEnd(col) => self.on_charge_end(col, t)?,
            }
        }
        let undeparted: Vec<EvId> =
            self.vehicles.iter().filter(|v| v.trace.t_leave.is_none()).map(|v| v.spec.id).collect();
        if !undeparted.is_empty() {
            return Err(SimError::HorizonTooShort { horizon_s: horizon, undeparted });
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
                .map(|c| ColumnTrace {
                    id: c.spec.id,
                    kind: c.spec.kind,
                    rating_watts: c.spec.rating_watts,
                    state_log: c.log,
                })
                .collect(),
            es_trace: self.sandbox.trace().to_vec(),
            requests: self.sandbox.requests().to_vec(),
            grant_order: self.sandbox.grant_order().to_vec(),
            connections: self.ports.history().to_vec(),
            events: self.log,
        }
    }

    fn on_arrival(&mut self, ev: EvId, t: f64) -> Result<(), SimError> {
        self.note(t, Entity::Ev(ev), "arrival", String::new());
        match self.ports.try_connect(ev, t)? {
            Some(col) => self.on_connect(ev, col, t),
            None => {
                let tolerance = self.vehicles[ev.0 as usize].spec.waiting_tolerance_s;
                let deadline = tolerance.map(|tw| t + tw);
                self.ports.enqueue_waiter(Waiter { ev, deadline });
                if let Some(d) = deadline.filter(|d| d.is_finite()) {
                    let id = self.schedule(d, Event::WaitExpired(ev))?;
                    self.vehicles[ev.0 as usize].wait_event = Some(id);
                }
                self.note(t, Entity::Ev(ev), "wait", String::new());
                Ok(())
            }
        }
    }

    fn on_connect(&mut self, ev: EvId, col: ColumnId, t: f64) -> Result<(), SimError> {
        let v = &mut self.vehicles[ev.0 as usize];
        if let Some(id) = v.wait_event.take() {
            self.calendar.cancel(id);
        }
        v.trace.t_connect = Some(t);
        v.trace.column = Some(col);
        v.trace.served = true;
        let stay = match v.spec.early_leave_s {
            Some(early) => early.min(v.spec.parking_duration_s),
            None => v.spec.parking_duration_s,
        };
        let needs_energy = v.remaining_ws > 0.0;
        self.schedule(t + stay, Event::Leave(ev))?;
        if self.config.strategy == Strategy::Shrd && needs_energy {
            self.columns[col.0 as usize].cycle.push(ev);
        }
        self.note(t, Entity::Ev(ev), "connect", col.to_string());
        self.try_start(col, t)
    }

    fn on_wait_expired(&mut self, ev: EvId, t: f64) -> Result<(), SimError> {
        let v = &mut self.vehicles[ev.0 as usize];
        v.wait_event = None;
        if self.ports.renege(ev) {
            v.trace.t_leave = Some(t);
            v.trace.served = false;
            self.note(t, Entity::Ev(ev), "renege", String::new());
        }
        Ok(())
    }

    fn on_leave(&mut self, ev: EvId, t: f64) -> Result<(), SimError> {
        let col = self.ports.disconnect(ev, t)?;
        let c = col.0 as usize;
        let mut grants = Vec::new();
        let phase = self.columns[c].phase;
        if phase.ev() == Some(ev) {
            match phase {
                Phase::AwaitingGrant { request, .. } => {
                    let (_, g) = self.sandbox.es_cancel(request, t);
                    grants = g;
                    self.note(t, Entity::Column(col), "cancel", format!("{ev} request {}", request.0));
                }
                Phase::Handshake { done, .. } => {
                    self.calendar.cancel(done);
                    let (_, g) = self.sandbox.es_release(col, t)?;
                    grants = g;
                    self.note(t, Entity::Column(col), "handshake_abort", ev.to_string());
                }
                Phase::Charging { watts, since, end, .. } => {
                    self.calendar.cancel(end);
                    self.close_episode(ev, since, t, watts, false);
                    let (_, g) = self.sandbox.es_release(col, t)?;
                    grants = g;
                    self.note(t, Entity::Column(col), "charge_end", format!("{ev} leave"));
                }
                Phase::Free => unreachable!(),
            }
            self.columns[c].phase = Phase::Free;
            self.columns[c].set_activity(t, ColumnActivity::Idle, None);
        }
        self.columns[c].cycle.remove(ev);

        let v = &mut self.vehicles[ev.0 as usize];
        v.trace.t_leave = Some(t);
        let (energy, cost) = super::settle(&v.trace, &self.prices)?;
        v.trace.energy_delivered_ws = energy;
        v.trace.cost = cost;
        self.note(t, Entity::Ev(ev), "leave", String::new());
        self.note(t, Entity::Ev(ev), "settle", format!("energy_ws={energy} cost={cost}"));

        self.start_grants(grants, t)?;
        while let Some((waiter, wcol)) = self.ports.admit_waiter(t) {
            self.on_connect(waiter, wcol, t)?;
        }
        self.try_start(col, t)
    }

    fn on_handshake_done(&mut self, col: ColumnId, t: f64) -> Result<(), SimError> {
        let Phase::Handshake { ev, watts, .. } = self.columns[col.0 as usize].phase else {
            unreachable!("handshake completion on a column that is not shaking hands");
        };
        self.note(t, Entity::Column(col), "handshake_end", ev.to_string());
        self.begin_charging(col, ev, watts, t)
    }

    fn on_charge_end(&mut self, col: ColumnId, t: f64) -> Result<(), SimError> {
        let c = col.0 as usize;
        let Phase::Charging { ev, watts, since, completes, .. } = self.columns[c].phase else {
            unreachable!("charge end on a column that is not charging");
        };
        let done = self.close_episode(ev, since, t, watts, completes);
        let (_, grants) = self.sandbox.es_release(col, t)?;
        self.columns[c].phase = Phase::Free;
        self.columns[c].set_activity(t, ColumnActivity::Idle, None);
        if done {
            self.columns[c].cycle.remove(ev);
            self.note(t, Entity::Column(col), "charge_end", format!("{ev} complete"));
        } else {
            self.note(t, Entity::Column(col), "charge_end", format!("{ev} slot"));
        }
        self.start_grants(grants, t)?;
        self.try_start(col, t)
    }

    /// Records the episode and returns whether the vehicle is now full.
    fn close_episode(&mut self, ev: EvId, since: f64, t: f64, watts: f64, completes: bool) -> bool {
        let v = &mut self.vehicles[ev.0 as usize];
        if t > since {
            v.trace.episodes.push(PowerEpisode { start_s: since, end_s: t, watts });
        }
        let done = completes || v.remaining_ws - watts * (t - since) <= COMPLETION_EPS * v.spec.energy_required_ws;
        v.remaining_ws = if done { 0.0 } else { v.remaining_ws - watts * (t - since) };
        if done {
            v.trace.completed = true;
        }
        done
    }

    fn try_start(&mut self, col: ColumnId, t: f64) -> Result<(), SimError> {
        let c = col.0 as usize;
        if self.columns[c].phase != Phase::Free {
            return Ok(());
        }
        let candidate = match self.config.strategy {
            Strategy::Fcfs => {
                let vehicles = &self.vehicles;
                select_fcfs(
                    self.ports
                        .connected(col)
                        .iter()
                        .copied()
                        .filter(|(ev, _)| vehicles[ev.0 as usize].remaining_ws > 0.0),
                )
            }
            Strategy::Shrd => self.columns[c].cycle.select(),
        };
        let Some(ev) = candidate else {
            return Ok(());
        };
        let watts = requested_power(self.columns[c].spec.rating_watts, self.vehicles[ev.0 as usize].spec.max_accept_watts);
        match self.sandbox.es_request(col, ev, watts, t)? {
            RequestOutcome::Granted(g) => {
                self.note(t, Entity::Sandbox, "grant", format!("{col} {ev} {watts}W request {}", g.request.0));
                self.start_granted(col, ev, watts, t)
            }
            RequestOutcome::Queued(request) => {
                self.columns[c].phase = Phase::AwaitingGrant { ev, request };
                self.note(t, Entity::Sandbox, "queue", format!("{col} {ev} {watts}W request {}", request.0));
                Ok(())
            }
        }
    }

    fn start_grants(&mut self, grants: Vec<Grant>, t: f64) -> Result<(), SimError> {
        for g in grants {
            let c = g.column.0 as usize;
            debug_assert_eq!(self.columns[c].phase, Phase::AwaitingGrant { ev: g.ev, request: g.request });
            self.note(t, Entity::Sandbox, "grant", format!("{} {} {}W request {}", g.column, g.ev, g.watts, g.request.0));
            self.columns[c].phase = Phase::Free;
            self.start_granted(g.column, g.ev, g.watts, t)?;
        }
        Ok(())
    }

    fn start_granted(&mut self, col: ColumnId, ev: EvId, watts: f64, t: f64) -> Result<(), SimError> {
        let c = col.0 as usize;
        let switch = self.columns[c].last_active != Some(ev);
        self.columns[c].last_active = Some(ev);
        if switch && self.config.handshake_s > 0.0 {
            let done = self.schedule(t + self.config.handshake_s, Event::HandshakeDone(col))?;
            self.columns[c].phase = Phase::Handshake { ev, watts, done };
            self.columns[c].set_activity(t, ColumnActivity::Handshake, Some(ev));
            self.note(t, Entity::Column(col), "handshake_start", ev.to_string());
            Ok(())
        } else {
            self.begin_charging(col, ev, watts, t)
        }
    }

    fn begin_charging(&mut self, col: ColumnId, ev: EvId, watts: f64, t: f64) -> Result<(), SimError> {
        let remaining = self.vehicles[ev.0 as usize].remaining_ws;
        let full_at = t + remaining / watts;
        let (end_at, completes) = match self.config.strategy {
            Strategy::Fcfs => (full_at, true),
            Strategy::Shrd => {
                let boundary = next_boundary(t, self.config.price_interval_s);
                if full_at <= boundary {
                    (full_at, true)
                } else {
                    (boundary, false)
                }
            }
        };
        let end = self.schedule(end_at, Event::ChargeEnd(col))?;
        let c = col.0 as usize;
        self.columns[c].phase = Phase::Charging { ev, watts, since: t, end, completes };
        self.columns[c].set_activity(t, ColumnActivity::Charging, Some(ev));
        self.note(t, Entity::Column(col), "charge_start", format!("{ev} {watts}W"));
        Ok(())
    }
}

/// Samples the fleet and runs one simulation.
pub fn simulate(config: &ScenarioConfig, seed: RunSeed, prices: &TimeSeries) -> Result<SimOutput, SimError> {
    let fleet = sample_fleet(config, seed)?;
    Simulation::new(config, seed, fleet, prices.clone())?.run()
}
