//! Shared power cap and port bookkeeping.
//!
//! The [`EnergySandbox`] grants power requests all-or-nothing under a
//! facility-wide cap. Requests that do not fit wait in a strict
//! head-of-line FCFS queue: a younger request is never granted past an
//! older one that still does not fit, unless the older one is cancelled.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{ColumnId, EvId, Placement};

#[derive(Debug, Error, PartialEq)]
pub enum SandboxError {
    #[error("{column} already holds an allocation or a pending request")]
    DoubleAllocation { column: ColumnId },
    #[error("{column} has no allocation to release")]
    NoAllocation { column: ColumnId },
    #[error("requested power must be positive, got {0}")]
    NonPositiveRequest(f64),
    #[error("{ev} is already connected")]
    AlreadyConnected { ev: EvId },
    #[error("{ev} is not connected")]
    NotConnected { ev: EvId },
}

/// `min(column rating, vehicle acceptance limit)`.
pub fn requested_power(column_rating_watts: f64, ev_accept_watts: f64) -> f64 {
    column_rating_watts.min(ev_accept_watts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RequestState {
    Pending,
    Granted { at: f64 },
    Cancelled { at: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRequest {
    pub id: RequestId,
    pub column: ColumnId,
    pub ev: EvId,
    pub watts: f64,
    pub t_req: f64,
    pub state: RequestState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grant {
    pub request: RequestId,
    pub column: ColumnId,
    pub ev: EvId,
    pub watts: f64,
    pub at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RequestOutcome {
    Granted(Grant),
    Queued(RequestId),
}

/// One change point of the aggregate allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllocPoint {
    pub time_s: f64,
    pub alloc_watts: f64,
}

#[derive(Debug, Clone)]
pub struct EnergySandbox {
    cap_watts: f64,
    alloc: BTreeMap<ColumnId, (RequestId, f64)>,
    pending: VecDeque<RequestId>,
    requests: Vec<PowerRequest>,
    grant_order: Vec<RequestId>,
    trace: Vec<AllocPoint>,
}

impl EnergySandbox {
    pub fn new(cap_watts: f64) -> Self {
        assert!(cap_watts > 0.0, "sandbox cap must be positive");
        Self {
            cap_watts,
            alloc: BTreeMap::new(),
            pending: VecDeque::new(),
            requests: Vec::new(),
            grant_order: Vec::new(),
            trace: vec![AllocPoint { time_s: 0.0, alloc_watts: 0.0 }],
        }
    }

    pub fn cap_watts(&self) -> f64 {
        self.cap_watts
    }

    pub fn total_alloc(&self) -> f64 {
        self.alloc.values().map(|(_, w)| w).sum()
    }

    pub fn allocation(&self, column: ColumnId) -> Option<f64> {
        self.alloc.get(&column).map(|&(_, w)| w)
    }

    pub fn pending(&self) -> impl Iterator<Item = &PowerRequest> {
        self.pending.iter().map(|id| &self.requests[id.0 as usize])
    }

    pub fn request(&self, id: RequestId) -> &PowerRequest {
        &self.requests[id.0 as usize]
    }

    /// Every request ever issued, indexed by id.
    pub fn requests(&self) -> &[PowerRequest] {
        &self.requests
    }

    /// Request ids in the order they were granted.
    pub fn grant_order(&self) -> &[RequestId] {
        &self.grant_order
    }

    pub fn trace(&self) -> &[AllocPoint] {
        &self.trace
    }

    fn record(&mut self, t: f64) {
        let total = self.total_alloc();
        assert!(
            (0.0..=self.cap_watts).contains(&total),
            "allocation {total} W outside [0, {}] W",
            self.cap_watts
        );
        self.trace.push(AllocPoint { time_s: t, alloc_watts: total });
    }

    fn fits(&self, watts: f64) -> bool {
        self.total_alloc() + watts <= self.cap_watts
    }

    fn grant(&mut self, id: RequestId, t: f64) -> Grant {
        let req = &mut self.requests[id.0 as usize];
        req.state = RequestState::Granted { at: t };
        let grant = Grant { request: id, column: req.column, ev: req.ev, watts: req.watts, at: t };
        self.alloc.insert(grant.column, (id, grant.watts));
        self.grant_order.push(id);
        self.record(t);
        grant
    }

    fn column_busy(&self, column: ColumnId) -> bool {
        self.alloc.contains_key(&column) || self.pending().any(|r| r.column == column)
    }

    pub fn es_request(
        &mut self,
        column: ColumnId,
        ev: EvId,
        watts: f64,
        t: f64,
    ) -> Result<RequestOutcome, SandboxError> {
        if watts.is_nan() || watts <= 0.0 {
            return Err(SandboxError::NonPositiveRequest(watts));
        }
        if self.column_busy(column) {
            return Err(SandboxError::DoubleAllocation { column });
        }
        let id = RequestId(self.requests.len() as u64);
        self.requests.push(PowerRequest { id, column, ev, watts, t_req: t, state: RequestState::Pending });
        if self.pending.is_empty() && self.fits(watts) {
            Ok(RequestOutcome::Granted(self.grant(id, t)))
        } else {
            self.pending.push_back(id);
            Ok(RequestOutcome::Queued(id))
        }
    }

    /// Grants queued requests head-first while the head fits.
    fn drain(&mut self, t: f64) -> Vec<Grant> {
        let mut grants = Vec::new();
        while let Some(&head) = self.pending.front() {
            if !self.fits(self.requests[head.0 as usize].watts) {
                break;
            }
            self.pending.pop_front();
            grants.push(self.grant(head, t));
        }
        grants
    }

    /// Releases the column's allocation and returns the freed watts together
    /// with any queued requests granted as a result.
    pub fn es_release(&mut self, column: ColumnId, t: f64) -> Result<(f64, Vec<Grant>), SandboxError> {
        let (_, watts) = self.alloc.remove(&column).ok_or(SandboxError::NoAllocation { column })?;
        self.record(t);
        let grants = self.drain(t);
        Ok((watts, grants))
    }

    /// Withdraws a pending request. Granted or unknown requests yield `false`.
    pub fn es_cancel(&mut self, id: RequestId, t: f64) -> (bool, Vec<Grant>) {
        let Some(pos) = self.pending.iter().position(|&p| p == id) else {
            return (false, Vec::new());
        };
        self.pending.remove(pos);
        self.requests[id.0 as usize].state = RequestState::Cancelled { at: t };
        (true, self.drain(t))
    }
}

/// Index of the column chosen for an arriving vehicle, given per-column
/// occupancy and capacity. `None` when every port is taken.
pub fn choose_column(occupancy: &[u32], capacity: &[u32], placement: Placement) -> Option<usize> {
    let free = occupancy.iter().zip(capacity).enumerate().filter(|(_, (o, c))| o < c);
    match placement {
        Placement::FirstFree => free.map(|(j, _)| j).next(),
        // min_by_key keeps the first minimum, i.e. the lowest index on ties.
        Placement::LeastOccupied => free.min_by_key(|(_, (o, _))| **o).map(|(j, _)| j),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Connection {
    pub ev: EvId,
    pub column: ColumnId,
    pub connect_s: f64,
    pub disconnect_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waiter {
    pub ev: EvId,
    /// Latest admission time; `None` waits forever.
    pub deadline: Option<f64>,
}

/// Port occupancy per column plus the facility-wide FCFS waitlist.
#[derive(Debug, Clone)]
pub struct PortLedger {
    capacity: Vec<u32>,
    connected: Vec<Vec<(EvId, f64)>>,
    location: HashMap<EvId, usize>,
    waitlist: VecDeque<Waiter>,
    placement: Placement,
    history: Vec<Connection>,
}

impl PortLedger {
    pub fn new(capacity: Vec<u32>, placement: Placement) -> Self {
        let n = capacity.len();
        Self {
            capacity,
            connected: vec![Vec::new(); n],
            location: HashMap::new(),
            waitlist: VecDeque::new(),
            placement,
            history: Vec::new(),
        }
    }

    pub fn occupancy(&self) -> Vec<u32> {
        self.connected.iter().map(|c| c.len() as u32).collect()
    }

    /// Connected vehicles with their connection times, in connection order.
    pub fn connected(&self, column: ColumnId) -> &[(EvId, f64)] {
        &self.connected[column.0 as usize]
    }

    pub fn column_of(&self, ev: EvId) -> Option<ColumnId> {
        self.location.get(&ev).map(|&j| ColumnId(j as u32))
    }

    pub fn history(&self) -> &[Connection] {
        &self.history
    }

    pub fn waiting(&self) -> impl Iterator<Item = &Waiter> {
        self.waitlist.iter()
    }

    fn attach(&mut self, ev: EvId, j: usize, t: f64) -> ColumnId {
        self.connected[j].push((ev, t));
        self.location.insert(ev, j);
        let column = ColumnId(j as u32);
        self.history.push(Connection { ev, column, connect_s: t, disconnect_s: None });
        column
    }

    /// Connects immediately if a port is free; otherwise returns `None` and
    /// the caller decides whether the vehicle waits.
    pub fn try_connect(&mut self, ev: EvId, t: f64) -> Result<Option<ColumnId>, SandboxError> {
        if self.location.contains_key(&ev) || self.waitlist.iter().any(|w| w.ev == ev) {
            return Err(SandboxError::AlreadyConnected { ev });
        }
        let occ = self.occupancy();
        Ok(choose_column(&occ, &self.capacity, self.placement).map(|j| self.attach(ev, j, t)))
    }

    pub fn enqueue_waiter(&mut self, waiter: Waiter) {
        self.waitlist.push_back(waiter);
    }

    /// Removes a vehicle from the waitlist; `false` if it was not waiting.
    pub fn renege(&mut self, ev: EvId) -> bool {
        match self.waitlist.iter().position(|w| w.ev == ev) {
            Some(pos) => {
                self.waitlist.remove(pos);
                true
            }
            None => false,
        }
    }

    pub fn disconnect(&mut self, ev: EvId, t: f64) -> Result<ColumnId, SandboxError> {
        let j = self.location.remove(&ev).ok_or(SandboxError::NotConnected { ev })?;
        self.connected[j].retain(|&(e, _)| e != ev);
        if let Some(rec) = self.history.iter_mut().rev().find(|c| c.ev == ev) {
            rec.disconnect_s = Some(t);
        }
        Ok(ColumnId(j as u32))
    }

    /// Connects the oldest waiter whose deadline has not passed, if a port is free.
    pub fn admit_waiter(&mut self, t: f64) -> Option<(EvId, ColumnId)> {
        self.waitlist.retain(|w| w.deadline.is_none_or(|d| d >= t));
        let occ = self.occupancy();
        let j = choose_column(&occ, &self.capacity, self.placement)?;
        let waiter = self.waitlist.pop_front()?;
        Some((waiter.ev, self.attach(waiter.ev, j, t)))
    }
}
