//! Information service, brokers, coordinators and the exchange.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::kernel::{Context, Entity, EntityId, Event, Fault, SimTime, Tag};
use crate::messages::{CreateFailure, LoadReport, Msg};
use crate::model::{Cloudlet, CloudletStatus, DatacenterCharacteristics, Vm, VmId, VmSpec};

/// Registry of data center characteristics.
#[derive(Debug, Default)]
pub struct Cis {
    entries: Vec<DatacenterCharacteristics>,
    rejected: Vec<EntityId>,
}

impl Cis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[DatacenterCharacteristics] {
        &self.entries
    }

    /// Data centers whose second registration was refused.
    pub fn rejected(&self) -> &[EntityId] {
        &self.rejected
    }

    pub fn register(&mut self, chars: DatacenterCharacteristics) -> Result<(), EntityId> {
        if self.entries.iter().any(|e| e.dc_id == chars.dc_id) {
            self.rejected.push(chars.dc_id);
            return Err(chars.dc_id);
        }
        self.entries.push(chars);
        Ok(())
    }

    /// Registered data centers able to host `spec`, in registration order.
    pub fn query(&self, spec: &VmSpec) -> Vec<EntityId> {
        self.entries.iter().filter(|e| e.can_host(spec)).map(|e| e.dc_id).collect()
    }
}

impl Entity<Msg> for Cis {
    fn handle(&mut self, event: Event<Msg>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        match event.payload {
            Msg::Register(chars) => {
                let _ = self.register(*chars);
            }
            Msg::DcListRequest(spec) => {
                let list = self.query(&spec);
                ctx.send(event.src, 0.0, Tag::DcList, Msg::DcList(list))?;
            }
            _ if event.tag == Tag::Start => {}
            _ => return Err(Fault::new(format!("information service cannot handle {}", event.tag))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BrokerConfig {
    pub cis: EntityId,
    pub monitor: EntityId,
    /// Data center to use if the information service lists it.
    pub preferred_dc: Option<EntityId>,
    pub confirm_vm_create: bool,
    pub confirm_cloudlet_submit: bool,
    pub vm_quota: Option<u32>,
}

/// Cloudlets submitted together at `offset` seconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Batch {
    pub offset: f64,
    pub cloudlets: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VmOutcome {
    Requested,
    Created,
    Failed,
    Destroyed,
}

#[derive(Clone, Debug)]
struct VmTrack {
    outcome: VmOutcome,
    dc: Option<EntityId>,
    failure: Option<CreateFailure>,
    outstanding: usize,
}

/// Acts for one user: finds a data center, creates VMs, submits cloudlets
/// on schedule and collects results.
pub struct Broker {
    cfg: BrokerConfig,
    vms: Vec<Vm>,
    cloudlets: Vec<Option<Cloudlet>>,
    batches: Vec<Batch>,
    track: BTreeMap<VmId, VmTrack>,
    home: Option<EntityId>,
    results: Vec<Cloudlet>,
    submit_acks: usize,
    done: bool,
}

impl Broker {
    /// `cloudlets` must be bound to VMs in `vms`; batches index into `cloudlets`.
    pub fn new(cfg: BrokerConfig, vms: Vec<Vm>, cloudlets: Vec<Cloudlet>, batches: Vec<Batch>) -> Self {
        let mut track: BTreeMap<VmId, VmTrack> = vms
            .iter()
            .map(|v| {
                (
                    v.id,
                    VmTrack {
                        outcome: VmOutcome::Requested,
                        dc: None,
                        failure: None,
                        outstanding: 0,
                    },
                )
            })
            .collect();
        for c in &cloudlets {
            if let Some(t) = track.get_mut(&c.vm) {
                t.outstanding += 1;
            }
        }
        Broker {
            cfg,
            vms,
            cloudlets: cloudlets.into_iter().map(Some).collect(),
            batches,
            track,
            home: None,
            results: Vec::new(),
            submit_acks: 0,
            done: false,
        }
    }

    pub fn home(&self) -> Option<EntityId> {
        self.home
    }

    pub fn results(&self) -> &[Cloudlet] {
        &self.results
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn vms(&self) -> &[Vm] {
        &self.vms
    }

    pub fn vm_outcome(&self, vm: VmId) -> Option<(VmOutcome, Option<EntityId>, Option<CreateFailure>)> {
        self.track.get(&vm).map(|t| (t.outcome, t.dc, t.failure))
    }

    pub fn submit_acks(&self) -> usize {
        self.submit_acks
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    fn requirement(&self) -> VmSpec {
        let mut req = VmSpec {
            cores: 0,
            mips: 0.0,
            ram_mb: 0,
            storage_mb: 0,
        };
        for v in &self.vms {
            req.cores = req.cores.max(v.spec.cores);
            req.mips = req.mips.max(v.spec.mips);
            req.ram_mb = req.ram_mb.max(v.spec.ram_mb);
            req.storage_mb = req.storage_mb.max(v.spec.storage_mb);
        }
        req
    }

    fn fail_locally(&mut self, mut c: Cloudlet) {
        c.status = CloudletStatus::Failed;
        self.collect(c);
    }

    fn collect(&mut self, c: Cloudlet) {
        if let Some(t) = self.track.get_mut(&c.vm) {
            t.outstanding = t.outstanding.saturating_sub(1);
        }
        self.results.push(c);
    }

    fn fail_vm(&mut self, vm: VmId, failure: CreateFailure) {
        if let Some(t) = self.track.get_mut(&vm) {
            t.outcome = VmOutcome::Failed;
            t.failure = Some(failure);
        }
    }

    fn maybe_destroy(&mut self, vm: VmId, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let Some(home) = self.home else { return Ok(()) };
        let Some(t) = self.track.get_mut(&vm) else { return Ok(()) };
        let created = t.outcome == VmOutcome::Created || (t.outcome == VmOutcome::Requested && !self.cfg.confirm_vm_create);
        if created && t.outstanding == 0 {
            t.outcome = VmOutcome::Destroyed;
            ctx.send(home, 0.0, Tag::VmDestroy, Msg::VmDestroy(vm))?;
        }
        Ok(())
    }

    fn check_done(&mut self, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        if self.done || self.results.len() < self.cloudlets.len() {
            return Ok(());
        }
        if self.cfg.confirm_vm_create && self.track.values().any(|t| t.outcome == VmOutcome::Requested) && self.home.is_some() {
            return Ok(());
        }
        self.done = true;
        ctx.send(self.cfg.monitor, 0.0, Tag::BrokerDone, Msg::BrokerDone(ctx.id()))?;
        Ok(())
    }

    fn on_dc_list(&mut self, list: Vec<EntityId>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let home = match self.cfg.preferred_dc {
            Some(p) if list.contains(&p) => Some(p),
            _ => list.first().copied(),
        };
        self.home = home;
        let Some(home) = home else {
            let vms: Vec<VmId> = self.vms.iter().map(|v| v.id).collect();
            for v in vms {
                self.fail_vm(v, CreateFailure::NoCapacity);
            }
            for c in std::mem::take(&mut self.cloudlets).into_iter().flatten() {
                self.cloudlets.push(None);
                self.fail_locally(c);
            }
            return self.check_done(ctx);
        };
        let quota = self.cfg.vm_quota.map_or(usize::MAX, |q| q as usize);
        for (i, vm) in self.vms.clone().into_iter().enumerate() {
            if i >= quota {
                self.fail_vm(vm.id, CreateFailure::QuotaExceeded);
                continue;
            }
            let id = vm.id;
            let ack = self.cfg.confirm_vm_create;
            ctx.send(home, 0.0, Tag::VmCreate, Msg::VmCreate { vm, ack })?;
            if !ack {
                self.maybe_destroy(id, ctx)?;
            }
        }
        let now = ctx.now().secs();
        for (i, b) in self.batches.iter().enumerate() {
            ctx.send(ctx.id(), (b.offset - now).max(0.0), Tag::SubmitBatch, Msg::SubmitBatch(i))?;
        }
        self.check_done(ctx)
    }

    fn on_batch(&mut self, i: usize, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let home = self.home.ok_or_else(|| Fault::new("batch without a data center"))?;
        let idx = self.batches[i].cloudlets.clone();
        for k in idx {
            let Some(c) = self.cloudlets[k].take() else { continue };
            let failed = self.track.get(&c.vm).is_none_or(|t| t.outcome == VmOutcome::Failed);
            if failed {
                self.fail_locally(c);
                continue;
            }
            let msg = Msg::CloudletSubmit {
                cloudlet: Box::new(c),
                ack: self.cfg.confirm_cloudlet_submit,
            };
            ctx.send(home, 0.0, Tag::CloudletSubmit, msg)?;
        }
        self.check_done(ctx)
    }
}

impl Entity<Msg> for Broker {
    fn handle(&mut self, event: Event<Msg>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        match (event.tag, event.payload) {
            (Tag::Start, _) => {
                if self.vms.is_empty() && self.cloudlets.is_empty() {
                    return self.check_done(ctx);
                }
                ctx.send(self.cfg.cis, 0.0, Tag::DcListRequest, Msg::DcListRequest(self.requirement()))?;
            }
            (_, Msg::DcList(list)) => self.on_dc_list(list, ctx)?,
            (_, Msg::SubmitBatch(i)) => self.on_batch(i, ctx)?,
            (_, Msg::VmCreateAck(ack)) => {
                match ack.result {
                    Ok(_) => {
                        if let Some(t) = self.track.get_mut(&ack.vm) {
                            if t.outcome == VmOutcome::Requested {
                                t.outcome = VmOutcome::Created;
                            }
                            t.dc = Some(ack.dc);
                        }
                        self.maybe_destroy(ack.vm, ctx)?;
                    }
                    Err(f) => self.fail_vm(ack.vm, f),
                }
                self.check_done(ctx)?;
            }
            (_, Msg::CloudletSubmitAck { .. }) => self.submit_acks += 1,
            (_, Msg::CloudletReturn(c)) => {
                let vm = c.vm;
                self.collect(*c);
                self.maybe_destroy(vm, ctx)?;
                self.check_done(ctx)?;
            }
            (tag, _) => return Err(Fault::new(format!("broker cannot handle {tag}"))),
        }
        Ok(())
    }
}

/// Ends the run once every broker has finished.
#[derive(Debug)]
pub struct ShutdownMonitor {
    expected: usize,
    done: BTreeSet<EntityId>,
    finished_at: Option<SimTime>,
}

impl ShutdownMonitor {
    pub fn new(expected: usize) -> Self {
        ShutdownMonitor {
            expected,
            done: BTreeSet::new(),
            finished_at: None,
        }
    }

    pub fn finished_at(&self) -> Option<SimTime> {
        self.finished_at
    }
}

impl Entity<Msg> for ShutdownMonitor {
    fn handle(&mut self, event: Event<Msg>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        match event.payload {
            Msg::BrokerDone(b) => {
                self.done.insert(b);
            }
            _ if event.tag == Tag::Start => {}
            _ => return Err(Fault::new(format!("shutdown monitor cannot handle {}", event.tag))),
        }
        if self.done.len() >= self.expected {
            self.finished_at = Some(ctx.now());
            ctx.end_simulation();
        }
        Ok(())
    }
}

/// Pairwise one-way latencies between data centers.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FederationTopology {
    pub nodes: Vec<EntityId>,
    latency: BTreeMap<(EntityId, EntityId), f64>,
}

impl FederationTopology {
    pub fn new(nodes: Vec<EntityId>) -> Self {
        FederationTopology {
            nodes,
            latency: BTreeMap::new(),
        }
    }

    /// Sets both directions.
    pub fn set_symmetric(&mut self, a: EntityId, b: EntityId, secs: f64) {
        self.latency.insert((a, b), secs);
        self.latency.insert((b, a), secs);
    }

    pub fn set(&mut self, from: EntityId, to: EntityId, secs: f64) {
        self.latency.insert((from, to), secs);
    }

    pub fn latency(&self, from: EntityId, to: EntityId) -> f64 {
        if from == to {
            return 0.0;
        }
        self.latency.get(&(from, to)).copied().unwrap_or(0.0)
    }

    /// Latencies from `from` to every other node.
    pub fn links_from(&self, from: EntityId) -> BTreeMap<EntityId, f64> {
        self.nodes
            .iter()
            .filter(|&&n| n != from)
            .map(|&n| (n, self.latency(from, n)))
            .collect()
    }
}

/// Picks the least loaded data center with a free slot, ties by id, and
/// counts the slot as taken until a fresher report arrives.
pub fn least_loaded(views: &mut BTreeMap<EntityId, LoadReport>, exclude: &[EntityId]) -> Option<EntityId> {
    let pick = views
        .values()
        .filter(|r| r.free_slot_estimate > 0 && !exclude.contains(&r.dc))
        .min_by(|a, b| a.busy_ratio.total_cmp(&b.busy_ratio).then(a.dc.cmp(&b.dc)))?
        .dc;
    let r = views.get_mut(&pick).expect("picked from views");
    r.free_slot_estimate -= 1;
    if r.host_count > 0 {
        r.busy_ratio = 1.0 - r.free_slot_estimate as f64 / r.host_count as f64;
    }
    Some(pick)
}

fn store_report(views: &mut BTreeMap<EntityId, LoadReport>, r: LoadReport) {
    match views.get(&r.dc) {
        Some(old) if old.timestamp > r.timestamp => {}
        _ => {
            views.insert(r.dc, r);
        }
    }
}

/// Market maker: aggregates load reports and answers placement queries.
#[derive(Debug, Default)]
pub struct CloudExchange {
    views: BTreeMap<EntityId, LoadReport>,
    answered: usize,
}

impl CloudExchange {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn views(&self) -> &BTreeMap<EntityId, LoadReport> {
        &self.views
    }

    pub fn answered(&self) -> usize {
        self.answered
    }
}

impl Entity<Msg> for CloudExchange {
    fn handle(&mut self, event: Event<Msg>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        match event.payload {
            Msg::SensorReport(r) => store_report(&mut self.views, r),
            Msg::PlacementQuery { vm, exclude, .. } => {
                let target = least_loaded(&mut self.views, &exclude);
                self.answered += 1;
                ctx.send(event.src, 0.0, Tag::PlacementReply, Msg::PlacementReply { vm, target })?;
            }
            _ if event.tag == Tag::Start => {}
            _ => return Err(Fault::new(format!("exchange cannot handle {}", event.tag))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CoordinatorConfig {
    pub home: EntityId,
    pub exchange: Option<EntityId>,
    /// Peer coordinators and the data center each one serves.
    pub peers: Vec<(EntityId, EntityId)>,
    pub topology: FederationTopology,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlacementDecision {
    pub time: f64,
    pub vm: VmId,
    pub target: Option<EntityId>,
}

/// Federation agent of one data center.
pub struct Coordinator {
    cfg: CoordinatorConfig,
    views: BTreeMap<EntityId, LoadReport>,
    inflight: BTreeMap<VmId, (Vm, Vec<EntityId>)>,
    decisions: Vec<PlacementDecision>,
}

impl Coordinator {
    pub fn new(cfg: CoordinatorConfig) -> Self {
        Coordinator {
            cfg,
            views: BTreeMap::new(),
            inflight: BTreeMap::new(),
            decisions: Vec::new(),
        }
    }

    pub fn home(&self) -> EntityId {
        self.cfg.home
    }

    /// Latest report held for each peer data center.
    pub fn views(&self) -> &BTreeMap<EntityId, LoadReport> {
        &self.views
    }

    pub fn decisions(&self) -> &[PlacementDecision] {
        &self.decisions
    }

    fn next_placement(&mut self, vm: VmId, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let (v, tried) = &self.inflight[&vm];
        match self.cfg.exchange {
            Some(ex) => {
                let msg = Msg::PlacementQuery {
                    vm,
                    spec: v.spec,
                    exclude: tried.clone(),
                };
                ctx.send(ex, 0.0, Tag::PlacementQuery, msg)?;
                Ok(())
            }
            None => {
                let exclude = tried.clone();
                let target = least_loaded(&mut self.views, &exclude);
                self.decide(vm, target, ctx)
            }
        }
    }

    fn decide(&mut self, vm: VmId, target: Option<EntityId>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        self.decisions.push(PlacementDecision {
            time: ctx.now().secs(),
            vm,
            target,
        });
        let home = self.cfg.home;
        match target {
            Some(dc) => {
                let entry = self.inflight.get_mut(&vm).ok_or_else(|| Fault::new(format!("no overflow for vm {vm}")))?;
                entry.1.push(dc);
                let msg = Msg::ForwardCreate {
                    vm: entry.0.clone(),
                    coordinator: ctx.id(),
                    origin: home,
                };
                ctx.send(dc, self.cfg.topology.latency(home, dc), Tag::MigrateRequest, msg)?;
            }
            None => {
                self.inflight.remove(&vm);
                ctx.send(home, 0.0, Tag::RouteUpdate, Msg::RouteUpdate { vm, dc: None, host: None })?;
            }
        }
        Ok(())
    }
}

impl Entity<Msg> for Coordinator {
    fn handle(&mut self, event: Event<Msg>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let home = self.cfg.home;
        match event.payload {
            Msg::SensorReport(r) if r.dc == home => {
                for &(coord, dc) in &self.cfg.peers {
                    ctx.send(coord, self.cfg.topology.latency(home, dc), Tag::SensorReport, Msg::SensorReport(r))?;
                }
                if let Some(ex) = self.cfg.exchange {
                    ctx.send(ex, 0.0, Tag::SensorReport, Msg::SensorReport(r))?;
                }
            }
            Msg::SensorReport(r) => store_report(&mut self.views, r),
            Msg::Overflow(vm) => {
                let id = vm.id;
                if self.inflight.insert(id, (vm, vec![home])).is_some() {
                    return Err(Fault::new(format!("vm {id} overflowed twice")));
                }
                self.next_placement(id, ctx)?;
            }
            Msg::PlacementReply { vm, target } => self.decide(vm, target, ctx)?,
            Msg::ForwardResult { vm, dc, host } => match host {
                Some(h) => {
                    self.inflight.remove(&vm.id);
                    let msg = Msg::RouteUpdate {
                        vm: vm.id,
                        dc: Some(dc),
                        host: Some(h),
                    };
                    ctx.send(home, 0.0, Tag::RouteUpdate, msg)?;
                }
                None => self.next_placement(vm.id, ctx)?,
            },
            Msg::MigrateCommand { vm, to } => {
                ctx.send(home, 0.0, Tag::MigrateRequest, Msg::MigrateCommand { vm, to })?;
            }
            _ if event.tag == Tag::Start => {}
            _ => return Err(Fault::new(format!("coordinator cannot handle {}", event.tag))),
        }
        Ok(())
    }
}
