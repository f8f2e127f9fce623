//! Deterministic discrete-event kernel.
//!
//! The kernel owns the simulation clock and the future-event queue. Entities
//! are registered before the run starts and receive every message addressed to
//! them through [`Entity::handle`]. All entities share one dispatch loop, so a
//! simulation is a single-threaded, fully reproducible computation: events are
//! delivered in `(time, sequence)` order, where the sequence number is assigned
//! when the event is inserted. Events scheduled for the same instant are
//! therefore delivered in the order they were sent.
//!
//! A run ends when the queue is empty or when an entity calls
//! [`Context::end_simulation`]. Events still queued at that point are counted
//! in [`Stats::pending`] so that `sent == delivered + pending` always holds.

use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

/// Simulated time in seconds.
///
/// Always finite and non-negative, which makes the total order below sound.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(secs: f64) -> Result<Self, SimError> {
        if secs.is_finite() && secs >= 0.0 {
            Ok(SimTime(secs))
        } else {
            Err(SimError::InvalidTime(secs))
        }
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense handle of a registered entity; ids are handed out from 0 in
/// registration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Message kinds understood by the kernel and the cloud entities built on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Start,
    EndSimulation,
    Register,
    DcListRequest,
    DcList,
    VmCreate,
    VmCreateAck,
    CloudletSubmit,
    CloudletSubmitAck,
    CloudletReturn,
    VmDestroy,
    InternalUpdate,
    SubmitBatch,
    SensorTick,
    SensorReport,
    Overflow,
    PlacementQuery,
    PlacementReply,
    MigrateRequest,
    MigrateIn,
    MigrateAck,
    RouteUpdate,
    BrokerDone,
    /// Free-form tag for entities outside the built-in protocol.
    User(u16),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Tag::Start => "START",
            Tag::EndSimulation => "END_SIMULATION",
            Tag::Register => "REGISTER",
            Tag::DcListRequest => "DC_LIST_REQUEST",
            Tag::DcList => "DC_LIST",
            Tag::VmCreate => "VM_CREATE",
            Tag::VmCreateAck => "VM_CREATE_ACK",
            Tag::CloudletSubmit => "CLOUDLET_SUBMIT",
            Tag::CloudletSubmitAck => "CLOUDLET_SUBMIT_ACK",
            Tag::CloudletReturn => "CLOUDLET_RETURN",
            Tag::VmDestroy => "VM_DESTROY",
            Tag::InternalUpdate => "INTERNAL_UPDATE",
            Tag::SubmitBatch => "SUBMIT_BATCH",
            Tag::SensorTick => "SENSOR_TICK",
            Tag::SensorReport => "SENSOR_REPORT",
            Tag::Overflow => "OVERFLOW",
            Tag::PlacementQuery => "PLACEMENT_QUERY",
            Tag::PlacementReply => "PLACEMENT_REPLY",
            Tag::MigrateRequest => "MIGRATE_REQUEST",
            Tag::MigrateIn => "MIGRATE_IN",
            Tag::MigrateAck => "MIGRATE_ACK",
            Tag::RouteUpdate => "ROUTE_UPDATE",
            Tag::BrokerDone => "BROKER_DONE",
            Tag::User(n) => return write!(f, "USER_{n}"),
        };
        f.write_str(name)
    }
}

/// A timestamped message between two entities.
#[derive(Debug)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub src: EntityId,
    pub dst: EntityId,
    pub tag: Tag,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            time: self.time,
            seq: self.seq,
            src: self.src,
            dst: self.dst,
            tag: self.tag,
        }
    }
}

// BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Payload-free summary of a delivered event, as written to the trace log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub seq: u64,
    pub src: EntityId,
    pub dst: EntityId,
    pub tag: Tag,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{}", self.time, self.seq, self.src, self.dst, self.tag)
    }
}

/// Writes a trace as `time,seq,src,dst,tag` lines.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Unrecoverable failure raised by an entity handler.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct Fault(pub String);

impl Fault {
    pub fn new(msg: impl Into<String>) -> Self {
        Fault(msg.into())
    }
}

impl From<SimError> for Fault {
    fn from(e: SimError) -> Self {
        Fault(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation time {0}")]
    InvalidTime(f64),
    #[error("negative delay {0}")]
    NegativeDelay(f64),
    #[error("unknown destination entity {0}")]
    UnknownEntity(EntityId),
    #[error("entity name `{0}` is already registered")]
    NameConflict(String),
    #[error("operation not allowed once the simulation has started")]
    AlreadyStarted,
    #[error("no simulation is running")]
    NotRunning,
    #[error("simulation has no entities")]
    NoEntities,
    #[error("run aborted at event {event}: {fault}")]
    Aborted { event: TraceRecord, fault: Fault },
}

/// Behavior of a simulation entity. Entities react only inside `handle`; any
/// effect on another entity has to travel as an event.
pub trait Entity<P>: Any {
    fn handle(&mut self, event: Event<P>, ctx: &mut Context<'_, P>) -> Result<(), Fault>;
}

/// Counters kept by the kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub sent: u64,
    pub delivered: u64,
    pub pending: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Finished,
}

struct Core<P> {
    clock: SimTime,
    queue: BinaryHeap<Event<P>>,
    next_seq: u64,
    sent: u64,
    delivered: u64,
    entity_count: u32,
    end_requested: bool,
    trace: Option<Vec<TraceRecord>>,
}

impl<P> Core<P> {
    fn push(&mut self, time: SimTime, src: EntityId, dst: EntityId, tag: Tag, payload: P) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.sent += 1;
        self.queue.push(Event {
            time,
            seq,
            src,
            dst,
            tag,
            payload,
        });
    }

    fn check_dst(&self, dst: EntityId) -> Result<(), SimError> {
        if dst.0 < self.entity_count {
            Ok(())
        } else {
            Err(SimError::UnknownEntity(dst))
        }
    }
}

/// Handle given to an entity while it processes one event.
pub struct Context<'a, P> {
    core: &'a mut Core<P>,
    me: EntityId,
}

impl<P> Context<'_, P> {
    /// Time of the event currently being dispatched.
    pub fn now(&self) -> SimTime {
        self.core.clock
    }

    pub fn id(&self) -> EntityId {
        self.me
    }

    pub fn send(&mut self, dst: EntityId, delay: f64, tag: Tag, payload: P) -> Result<(), SimError> {
        if delay.is_nan() || delay < 0.0 {
            return Err(SimError::NegativeDelay(delay));
        }
        self.core.check_dst(dst)?;
        let time = SimTime::new(self.core.clock.0 + delay)?;
        self.core.push(time, self.me, dst, tag, payload);
        Ok(())
    }

    /// Schedules an event at an absolute instant, which must not lie in the past.
    pub fn send_at(&mut self, dst: EntityId, at: SimTime, tag: Tag, payload: P) -> Result<(), SimError> {
        if at < self.core.clock {
            return Err(SimError::NegativeDelay(at.0 - self.core.clock.0));
        }
        self.core.check_dst(dst)?;
        self.core.push(at, self.me, dst, tag, payload);
        Ok(())
    }

    /// Stops the run once the current handler returns.
    pub fn end_simulation(&mut self) {
        self.core.end_requested = true;
    }
}

struct Registered<P> {
    name: String,
    handler: Box<dyn Entity<P>>,
}

/// One independent simulation instance.
pub struct Simulation<P> {
    entities: Vec<Registered<P>>,
    names: BTreeMap<String, EntityId>,
    core: Core<P>,
    phase: Phase,
    start_payload: fn() -> P,
}

impl<P: 'static> Simulation<P> {
    /// `start_payload` builds the body of the START event each entity receives
    /// at time 0.
    pub fn new(start_payload: fn() -> P) -> Self {
        Simulation {
            entities: Vec::new(),
            names: BTreeMap::new(),
            core: Core {
                clock: SimTime::ZERO,
                queue: BinaryHeap::new(),
                next_seq: 0,
                sent: 0,
                delivered: 0,
                entity_count: 0,
                end_requested: false,
                trace: None,
            },
            phase: Phase::Idle,
            start_payload,
        }
    }

    /// Keeps a record of every delivered event.
    pub fn enable_trace(&mut self) {
        self.core.trace.get_or_insert_with(Vec::new);
    }

    pub fn register<E: Entity<P>>(&mut self, name: &str, entity: E) -> Result<EntityId, SimError> {
        self.register_boxed(name, Box::new(entity))
    }

    pub fn register_boxed(&mut self, name: &str, entity: Box<dyn Entity<P>>) -> Result<EntityId, SimError> {
        if self.phase != Phase::Idle {
            return Err(SimError::AlreadyStarted);
        }
        if self.names.contains_key(name) {
            return Err(SimError::NameConflict(name.to_string()));
        }
        let id = EntityId(self.entities.len() as u32);
        self.names.insert(name.to_string(), id);
        self.entities.push(Registered {
            name: name.to_string(),
            handler: entity,
        });
        self.core.entity_count = id.0 + 1;
        Ok(id)
    }

    /// Id that the next registration will receive.
    pub fn next_id(&self) -> EntityId {
        EntityId(self.entities.len() as u32)
    }

    pub fn lookup(&self, name: &str) -> Option<EntityId> {
        self.names.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.index()).map(|r| r.name.as_str())
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Places an externally generated event into the queue before the run
    /// starts. The event appears to come from its own destination.
    pub fn inject(&mut self, at: f64, dst: EntityId, tag: Tag, payload: P) -> Result<(), SimError> {
        if self.phase != Phase::Idle {
            return Err(SimError::AlreadyStarted);
        }
        self.core.check_dst(dst)?;
        let time = SimTime::new(at)?;
        self.core.push(time, dst, dst, tag, payload);
        Ok(())
    }

    /// Enqueues a START event for every entity, in registration order.
    pub fn start(&mut self) -> Result<(), SimError> {
        if self.phase != Phase::Idle {
            return Err(SimError::AlreadyStarted);
        }
        if self.entities.is_empty() {
            return Err(SimError::NoEntities);
        }
        for i in 0..self.entities.len() {
            let id = EntityId(i as u32);
            let payload = (self.start_payload)();
            self.core.push(SimTime::ZERO, id, id, Tag::Start, payload);
        }
        self.phase = Phase::Running;
        Ok(())
    }

    /// Delivers the next event. Returns its time, or `None` once the run is over.
    pub fn step(&mut self) -> Result<Option<SimTime>, SimError> {
        if self.phase != Phase::Running {
            return Err(SimError::NotRunning);
        }
        if self.core.end_requested {
            self.phase = Phase::Finished;
            return Ok(None);
        }
        let Some(event) = self.core.queue.pop() else {
            self.phase = Phase::Finished;
            return Ok(None);
        };
        debug_assert!(event.time >= self.core.clock);
        self.core.clock = event.time;
        self.core.delivered += 1;
        let record = event.record();
        if let Some(trace) = self.core.trace.as_mut() {
            trace.push(record);
        }
        let dst = event.dst;
        let target = &mut self.entities[dst.index()].handler;
        let mut ctx = Context {
            core: &mut self.core,
            me: dst,
        };
        if let Err(fault) = target.handle(event, &mut ctx) {
            self.phase = Phase::Finished;
            return Err(SimError::Aborted { event: record, fault });
        }
        Ok(Some(record.time))
    }

    /// Runs to termination and returns the final clock value.
    pub fn run(&mut self) -> Result<SimTime, SimError> {
        self.start()?;
        while self.step()?.is_some() {}
        Ok(self.core.clock)
    }

    /// Clock of the event being dispatched; only meaningful between `start`
    /// and the end of the run.
    pub fn now(&self) -> Result<SimTime, SimError> {
        match self.phase {
            Phase::Running => Ok(self.core.clock),
            _ => Err(SimError::NotRunning),
        }
    }

    /// Clock value at which the last event was delivered.
    pub fn clock(&self) -> SimTime {
        self.core.clock
    }

    pub fn stats(&self) -> Stats {
        Stats {
            sent: self.core.sent,
            delivered: self.core.delivered,
            pending: self.core.queue.len() as u64,
        }
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.core.trace.as_deref().unwrap_or(&[])
    }

    pub fn entity<T: Entity<P>>(&self, id: EntityId) -> Option<&T> {
        let handler: &dyn Any = self.entities.get(id.index())?.handler.as_ref();
        handler.downcast_ref::<T>()
    }

    pub fn entity_mut<T: Entity<P>>(&mut self, id: EntityId) -> Option<&mut T> {
        let handler: &mut dyn Any = self.entities.get_mut(id.index())?.handler.as_mut();
        handler.downcast_mut::<T>()
    }
}
