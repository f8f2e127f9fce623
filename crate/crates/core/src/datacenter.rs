//! The data center entity: VM provisioning, cloudlet execution, billing and
//! the data center's side of federation (overflow, forwarding, migration).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::host::{min_time, Host, RejectReason};
use crate::kernel::{Context, Entity, EntityId, Event, Fault, SimTime, Tag};
use crate::market::{charge_partial_cpu, ChargePolicy, CostRates, LineItem, UsageCharges};
use crate::messages::{CreateFailure, LoadReport, MigrationPackage, Msg, VmCreateAck};
use crate::model::{bytes_to_mb, Cloudlet, CloudletId, CloudletStatus, DatacenterCharacteristics, HostId, SanStorage, Vm, VmId, VmSpec, VmState};
use crate::provision::{free_slots, FirstFit, VmProvisioner};

/// Federation wiring of one data center.
#[derive(Clone, Debug)]
pub struct FederationHook {
    pub coordinator: EntityId,
    /// Sensor period in seconds.
    pub sensor_period: f64,
    /// Spec used to count free slots in load reports.
    pub reference_vm: VmSpec,
}

#[derive(Clone, Debug)]
pub struct DatacenterConfig {
    pub cis: EntityId,
    pub costs: CostRates,
    /// Hold VMs that do not fit in a FIFO until capacity frees.
    pub queueing: bool,
    pub record_rates: bool,
    pub federation: Option<FederationHook>,
    /// One-way latency in seconds to other data centers; absent means 0.
    pub links: BTreeMap<EntityId, f64>,
    /// Extra seconds a running VM spends in transit when migrated.
    pub migration_delay: f64,
    pub san: Option<SanStorage>,
}

impl DatacenterConfig {
    pub fn new(cis: EntityId) -> Self {
        DatacenterConfig {
            cis,
            costs: CostRates::default(),
            queueing: false,
            record_rates: false,
            federation: None,
            links: BTreeMap::new(),
            migration_delay: 0.0,
            san: None,
        }
    }
}

/// One VM or cloudlet hand-over between data centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MigrationRecord {
    pub time: f64,
    pub vm: VmId,
    pub from: EntityId,
    pub to: EntityId,
    pub cloudlets_moved: usize,
}

#[derive(Clone, Debug)]
enum Route {
    Local,
    Queued {
        vm: Vm,
        held: Vec<Cloudlet>,
        ack: bool,
    },
    /// Overflowed to the coordinator; waiting for a placement.
    Pending {
        vm: Vm,
        held: Vec<Cloudlet>,
        ack: bool,
        destroy: bool,
    },
    Remote(EntityId),
    /// Running VM on its way to another data center.
    Outbound {
        to: EntityId,
        since: f64,
        moved: usize,
        held: Vec<Cloudlet>,
        destroy: bool,
    },
}

pub struct Datacenter {
    name: String,
    cfg: DatacenterConfig,
    hosts: Vec<Host>,
    characteristics: DatacenterCharacteristics,
    provisioner: Box<dyn VmProvisioner>,
    charges: Box<dyn ChargePolicy>,
    routes: BTreeMap<VmId, Route>,
    placement: BTreeMap<VmId, usize>,
    pending_vms: VecDeque<VmId>,
    active_hosts: BTreeSet<usize>,
    scheduled_updates: BTreeSet<SimTime>,
    san_held: BTreeMap<CloudletId, u64>,
    items: Vec<LineItem>,
    migrations: Vec<MigrationRecord>,
    warnings: Vec<String>,
    last_report: Option<LoadReport>,
}

impl Datacenter {
    pub fn new(name: &str, cfg: DatacenterConfig, hosts: Vec<Host>, characteristics: DatacenterCharacteristics) -> Self {
        Datacenter {
            name: name.to_string(),
            cfg,
            hosts,
            characteristics,
            provisioner: Box::new(FirstFit),
            charges: Box::new(UsageCharges),
            routes: BTreeMap::new(),
            placement: BTreeMap::new(),
            pending_vms: VecDeque::new(),
            active_hosts: BTreeSet::new(),
            scheduled_updates: BTreeSet::new(),
            san_held: BTreeMap::new(),
            items: Vec::new(),
            migrations: Vec::new(),
            warnings: Vec::new(),
            last_report: None,
        }
    }

    pub fn with_provisioner(mut self, p: Box<dyn VmProvisioner>) -> Self {
        self.provisioner = p;
        self
    }

    pub fn with_charge_policy(mut self, c: Box<dyn ChargePolicy>) -> Self {
        self.charges = c;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn characteristics(&self) -> &DatacenterCharacteristics {
        &self.characteristics
    }

    pub fn line_items(&self) -> &[LineItem] {
        &self.items
    }

    pub fn migrations(&self) -> &[MigrationRecord] {
        &self.migrations
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn san(&self) -> Option<&SanStorage> {
        self.cfg.san.as_ref()
    }

    pub fn queued_vms(&self) -> usize {
        self.pending_vms.len()
    }

    pub fn last_report(&self) -> Option<&LoadReport> {
        self.last_report.as_ref()
    }

    /// Host currently running `vm`, if it runs here.
    pub fn host_of(&self, vm: VmId) -> Option<HostId> {
        self.placement.get(&vm).map(|&i| self.hosts[i].id)
    }

    /// Where this data center sends traffic for `vm`, if elsewhere.
    pub fn forwards_to(&self, vm: VmId) -> Option<EntityId> {
        match self.routes.get(&vm) {
            Some(Route::Remote(dc)) => Some(*dc),
            _ => None,
        }
    }

    /// Availability snapshot for the given spec.
    pub fn load_report(&self, me: EntityId, reference: &VmSpec, now: SimTime) -> LoadReport {
        let free = free_slots(&self.hosts, reference) as u32;
        let n = self.hosts.len() as u32;
        LoadReport {
            dc: me,
            free_slot_estimate: free,
            busy_ratio: if n == 0 { 1.0 } else { 1.0 - free as f64 / n as f64 },
            host_count: n,
            timestamp: now,
        }
    }

    fn latency(&self, to: EntityId) -> f64 {
        self.cfg.links.get(&to).copied().unwrap_or(0.0)
    }

    fn could_ever_fit(&self, spec: &VmSpec) -> bool {
        self.hosts.iter().any(|h| h.fits_when_empty(spec))
    }

    fn place(&mut self, vm: Vm, now: SimTime) -> Result<HostId, (Vm, RejectReason)> {
        let i = match self.provisioner.select_host(&self.hosts, &vm.spec) {
            Ok(i) => i,
            Err(reason) => return Err((vm, reason)),
        };
        let id = vm.id;
        self.hosts[i].allocate(vm, now, self.cfg.record_rates)?;
        self.placement.insert(id, i);
        self.active_hosts.insert(i);
        self.routes.insert(id, Route::Local);
        Ok(self.hosts[i].id)
    }

    fn charge_creation(&mut self, vm: &Vm) {
        let items = self.charges.vm_creation(&self.cfg.costs, vm);
        self.items.extend(items);
    }

    /// Advances every busy host to `now` and returns finished cloudlets.
    fn advance(&mut self, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let mut finished = Vec::new();
        for &i in &self.active_hosts {
            let up = self.hosts[i]
                .update_vms_processing(now)
                .map_err(|e| Fault::new(format!("host {}: {e}", self.hosts[i].id)))?;
            finished.extend(up.finished);
        }
        finished.sort_by(|a, b| a.finish_time.cmp(&b.finish_time).then(a.id.cmp(&b.id)));
        for c in finished {
            self.complete(c, ctx)?;
        }
        Ok(())
    }

    fn complete(&mut self, mut c: Cloudlet, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        c.dc = Some(ctx.id());
        self.release_san(c.id);
        let items = self
            .charges
            .cloudlet(&self.cfg.costs, &c)
            .map_err(|e| Fault::new(e.to_string()))?;
        self.items.extend(items);
        let owner = c.owner;
        ctx.send(owner, 0.0, Tag::CloudletReturn, Msg::CloudletReturn(Box::new(c)))?;
        Ok(())
    }

    fn fail_cloudlet(&mut self, mut c: Cloudlet, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        c.status = CloudletStatus::Failed;
        c.dc = Some(ctx.id());
        self.release_san(c.id);
        let owner = c.owner;
        ctx.send(owner, 0.0, Tag::CloudletReturn, Msg::CloudletReturn(Box::new(c)))?;
        Ok(())
    }

    fn release_san(&mut self, id: CloudletId) {
        if let (Some(mb), Some(san)) = (self.san_held.remove(&id), self.cfg.san.as_mut()) {
            // Never underflows: only what was allocated is recorded.
            let _ = san.release(mb);
        }
    }

    /// Recomputes predictions after a change and schedules the next update.
    fn settle(&mut self, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        self.advance(now, ctx)?;
        let mut next = None;
        let mut idle = Vec::new();
        for &i in &self.active_hosts {
            let h = &self.hosts[i];
            if h.is_idle() {
                idle.push(i);
                continue;
            }
            for r in h.residents() {
                next = min_time(next, r.scheduler.next_completion());
            }
        }
        for i in idle {
            self.active_hosts.remove(&i);
        }
        if let Some(t) = next {
            let t = t.max(now);
            if self.scheduled_updates.insert(t) {
                ctx.send_at(ctx.id(), t, Tag::InternalUpdate, Msg::Empty)?;
            }
        }
        Ok(())
    }

    fn ack_create(&self, ctx: &mut Context<'_, Msg>, vm: &Vm, dc: EntityId, result: Result<HostId, CreateFailure>) -> Result<(), Fault> {
        let ack = VmCreateAck { vm: vm.id, dc, result };
        ctx.send(vm.owner, 0.0, Tag::VmCreateAck, Msg::VmCreateAck(ack))?;
        Ok(())
    }

    fn submit_local(&mut self, vm: VmId, c: Cloudlet) -> Result<(), Fault> {
        let i = *self
            .placement
            .get(&vm)
            .ok_or_else(|| Fault::new(format!("vm {vm} has no host")))?;
        let r = self.hosts[i]
            .resident_mut(vm)
            .ok_or_else(|| Fault::new(format!("vm {vm} missing from host")))?;
        r.scheduler.submit(c);
        Ok(())
    }

    /// Places queued VMs in FIFO order while the head fits.
    fn drain_queue(&mut self, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        while let Some(&head) = self.pending_vms.front() {
            let Some(Route::Queued { vm, .. }) = self.routes.get(&head) else {
                self.pending_vms.pop_front();
                continue;
            };
            if self.provisioner.select_host(&self.hosts, &vm.spec).is_err() {
                break;
            }
            self.pending_vms.pop_front();
            let Some(Route::Queued { vm, held, ack }) = self.routes.remove(&head) else {
                unreachable!()
            };
            let owner_copy = vm.clone();
            let host = self.place(vm, now).map_err(|(_, r)| Fault::new(format!("queued vm {head} no longer fits: {r}")))?;
            self.charge_creation(&owner_copy);
            for c in held {
                self.submit_local(head, c)?;
            }
            if ack {
                self.ack_create(ctx, &owner_copy, ctx.id(), Ok(host))?;
            }
        }
        Ok(())
    }

    fn on_vm_create(&mut self, vm: Vm, ack: bool, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        if self.routes.contains_key(&vm.id) {
            return Err(Fault::new(format!("duplicate creation of vm {}", vm.id)));
        }
        let federated = self.cfg.federation.clone();
        // Without federation a non-empty queue keeps strict FIFO order.
        let behind_queue = self.cfg.queueing && federated.is_none() && !self.pending_vms.is_empty();
        let id = vm.id;
        let attempt = if behind_queue {
            Err((vm, RejectReason::NoCores))
        } else {
            self.place(vm, now)
        };
        match attempt {
            Ok(host) => {
                let vm = self.resident_vm(id).clone();
                self.charge_creation(&vm);
                if ack {
                    self.ack_create(ctx, &vm, ctx.id(), Ok(host))?;
                }
            }
            Err((vm, reason)) => {
                if let Some(hook) = federated {
                    self.routes.insert(
                        vm.id,
                        Route::Pending {
                            vm: vm.clone(),
                            held: Vec::new(),
                            ack,
                            destroy: false,
                        },
                    );
                    ctx.send(hook.coordinator, 0.0, Tag::Overflow, Msg::Overflow(vm))?;
                } else if self.cfg.queueing && self.could_ever_fit(&vm.spec) {
                    self.enqueue(vm, Vec::new(), ack);
                } else {
                    self.ack_create(ctx, &vm, ctx.id(), Err(CreateFailure::Rejected(reason)))?;
                }
            }
        }
        Ok(())
    }

    fn enqueue(&mut self, mut vm: Vm, held: Vec<Cloudlet>, ack: bool) {
        vm.state = VmState::Queued;
        self.pending_vms.push_back(vm.id);
        self.routes.insert(vm.id, Route::Queued { vm, held, ack });
    }

    fn on_submit(&mut self, mut c: Cloudlet, ack: bool, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        if c.submit_time.is_none() {
            c.submit_time = Some(now);
        }
        let vm = c.vm;
        let (id, owner) = (c.id, c.owner);
        match self.routes.get_mut(&vm) {
            Some(Route::Local) => {
                if let Some(san) = self.cfg.san.as_mut() {
                    let mb = bytes_to_mb(c.input_bytes + c.output_bytes);
                    if let Err(e) = san.allocate(mb) {
                        self.warnings.push(format!("t={now}: cloudlet {id} failed: {e}"));
                        return self.reject_submit(c, ack, ctx);
                    }
                    self.san_held.insert(id, mb);
                    let delay = san.transfer_time(c.input_bytes);
                    if delay > 0.0 {
                        ctx.send(ctx.id(), delay, Tag::CloudletSubmit, Msg::Staged(Box::new(c)))?;
                        return self.ack_submit(ctx, owner, id, ack, true);
                    }
                }
                self.submit_local(vm, c)?;
                self.ack_submit(ctx, owner, id, ack, true)
            }
            Some(Route::Queued { held, .. }) | Some(Route::Pending { held, .. }) | Some(Route::Outbound { held, .. }) => {
                held.push(c);
                self.ack_submit(ctx, owner, id, ack, true)
            }
            Some(Route::Remote(dc)) => {
                let dc = *dc;
                let msg = Msg::CloudletSubmit {
                    cloudlet: Box::new(c),
                    ack,
                };
                ctx.send(dc, self.latency(dc), Tag::CloudletSubmit, msg)?;
                Ok(())
            }
            None => {
                self.warnings.push(format!("t={now}: cloudlet {id} bound to unknown vm {vm}"));
                self.reject_submit(c, ack, ctx)
            }
        }
    }

    fn ack_submit(&self, ctx: &mut Context<'_, Msg>, owner: EntityId, cloudlet: CloudletId, ack: bool, accepted: bool) -> Result<(), Fault> {
        if ack {
            ctx.send(owner, 0.0, Tag::CloudletSubmitAck, Msg::CloudletSubmitAck { cloudlet, accepted })?;
        }
        Ok(())
    }

    fn reject_submit(&mut self, c: Cloudlet, ack: bool, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        self.ack_submit(ctx, c.owner, c.id, ack, false)?;
        self.fail_cloudlet(c, ctx)
    }

    fn on_staged(&mut self, c: Cloudlet, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let vm = c.vm;
        match self.routes.get_mut(&vm) {
            Some(Route::Local) => self.submit_local(vm, c),
            Some(Route::Outbound { held, .. }) => {
                held.push(c);
                Ok(())
            }
            Some(Route::Remote(dc)) => {
                let dc = *dc;
                self.release_san(c.id);
                let msg = Msg::CloudletSubmit {
                    cloudlet: Box::new(c),
                    ack: false,
                };
                ctx.send(dc, self.latency(dc), Tag::CloudletSubmit, msg)?;
                Ok(())
            }
            _ => {
                self.warnings.push(format!("t={now}: vm {vm} left before cloudlet {} was staged", c.id));
                self.fail_cloudlet(c, ctx)
            }
        }
    }

    fn on_destroy(&mut self, vm: VmId, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        match self.routes.get_mut(&vm) {
            None => return Err(Fault::new(format!("destroy of unknown vm {vm}"))),
            Some(Route::Pending { destroy, .. }) | Some(Route::Outbound { destroy, .. }) => {
                *destroy = true;
                return Ok(());
            }
            Some(_) => {}
        }
        match self.routes.remove(&vm) {
            Some(Route::Local) => {
                let i = self.placement.remove(&vm).expect("local vm has a host");
                let mut resident = self.hosts[i].deallocate(vm).expect("local vm is resident");
                for c in resident.scheduler.drain() {
                    self.warnings.push(format!("t={now}: cloudlet {} dropped with vm {vm}", c.id));
                    self.fail_cloudlet(c, ctx)?;
                }
                self.drain_queue(now, ctx)?;
            }
            Some(Route::Queued { held, .. }) => {
                self.pending_vms.retain(|v| *v != vm);
                for c in held {
                    self.fail_cloudlet(c, ctx)?;
                }
            }
            Some(Route::Remote(dc)) => {
                ctx.send(dc, self.latency(dc), Tag::VmDestroy, Msg::VmDestroy(vm))?;
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn on_forward_create(&mut self, vm: Vm, coordinator: EntityId, origin: EntityId, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        if matches!(self.routes.get(&vm.id), Some(r) if !matches!(r, Route::Remote(_))) {
            return Err(Fault::new(format!("forwarded vm {} already known here", vm.id)));
        }
        let host = match self.place(vm.clone(), now) {
            Ok(h) => {
                self.charge_creation(&vm);
                Some(h)
            }
            Err(_) => None,
        };
        let msg = Msg::ForwardResult { vm, dc: ctx.id(), host };
        ctx.send(coordinator, self.latency(origin), Tag::MigrateAck, msg)?;
        Ok(())
    }

    fn on_route_update(&mut self, vm: VmId, dc: Option<EntityId>, host: Option<HostId>, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let Some(Route::Pending { vm: v, held, ack, destroy }) = self.routes.remove(&vm) else {
            return Err(Fault::new(format!("placement for vm {vm} that is not pending")));
        };
        match (dc, host) {
            (Some(dc), Some(host)) => {
                self.routes.insert(vm, Route::Remote(dc));
                if ack {
                    self.ack_create(ctx, &v, dc, Ok(host))?;
                }
                self.migrations.push(MigrationRecord {
                    time: now.secs(),
                    vm,
                    from: ctx.id(),
                    to: dc,
                    cloudlets_moved: held.len(),
                });
                let lat = self.latency(dc);
                for c in held {
                    let msg = Msg::CloudletSubmit {
                        cloudlet: Box::new(c),
                        ack: false,
                    };
                    ctx.send(dc, lat, Tag::CloudletSubmit, msg)?;
                }
                if destroy {
                    self.routes.remove(&vm);
                    ctx.send(dc, lat, Tag::VmDestroy, Msg::VmDestroy(vm))?;
                }
            }
            _ => {
                if destroy {
                    for c in held {
                        self.fail_cloudlet(c, ctx)?;
                    }
                    return Ok(());
                }
                // Nobody in the federation had room.
                let behind_queue = !self.pending_vms.is_empty();
                match if behind_queue { Err((v, RejectReason::NoCores)) } else { self.place(v, now) } {
                    Ok(host) => {
                        let v = self.resident_vm(vm).clone();
                        self.charge_creation(&v);
                        for c in held {
                            self.submit_local(vm, c)?;
                        }
                        if ack {
                            self.ack_create(ctx, &v, ctx.id(), Ok(host))?;
                        }
                    }
                    Err((v, _)) if self.cfg.queueing && self.could_ever_fit(&v.spec) => self.enqueue(v, held, ack),
                    Err((v, _)) => {
                        self.ack_create(ctx, &v, ctx.id(), Err(CreateFailure::NoCapacity))?;
                        for c in held {
                            self.fail_cloudlet(c, ctx)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn resident_vm(&self, vm: VmId) -> &Vm {
        let i = self.placement[&vm];
        &self.hosts[i].resident(vm).expect("placed vm is resident").vm
    }

    fn on_migrate_command(&mut self, vm: VmId, to: EntityId, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        if to == ctx.id() {
            self.warnings.push(format!("t={now}: vm {vm} already at the requested data center"));
            return Ok(());
        }
        let package = match self.routes.get(&vm) {
            Some(Route::Remote(dc)) => {
                let dc = *dc;
                ctx.send(dc, self.latency(dc), Tag::MigrateRequest, Msg::MigrateCommand { vm, to })?;
                return Ok(());
            }
            Some(Route::Local) => {
                let i = self.placement.remove(&vm).expect("local vm has a host");
                let mut resident = self.hosts[i].deallocate(vm).expect("local vm is resident");
                let mut cloudlets = resident.scheduler.drain();
                for c in &mut cloudlets {
                    let item = charge_partial_cpu(&self.cfg.costs, c);
                    self.items.push(item);
                    self.release_san(c.id);
                }
                let mut v = resident.vm;
                v.state = VmState::Migrating;
                MigrationPackage {
                    vm: v,
                    cloudlets,
                    origin: ctx.id(),
                }
            }
            Some(Route::Queued { .. }) => {
                self.pending_vms.retain(|v| *v != vm);
                let Some(Route::Queued { mut vm, held, .. }) = self.routes.remove(&vm) else {
                    unreachable!()
                };
                vm.state = VmState::Migrating;
                MigrationPackage {
                    vm,
                    cloudlets: held,
                    origin: ctx.id(),
                }
            }
            Some(_) => {
                self.warnings.push(format!("t={now}: vm {vm} is in transit and cannot migrate"));
                return Ok(());
            }
            None => {
                self.warnings.push(format!("t={now}: migration of unknown vm {vm} ignored"));
                return Ok(());
            }
        };
        self.routes.insert(
            vm,
            Route::Outbound {
                to,
                since: now.secs(),
                moved: package.cloudlets.len(),
                held: Vec::new(),
                destroy: false,
            },
        );
        let delay = self.latency(to) + self.cfg.migration_delay;
        ctx.send(to, delay, Tag::MigrateIn, Msg::MigrateIn(Box::new(package)))?;
        self.drain_queue(now, ctx)
    }

    fn on_migrate_in(&mut self, package: MigrationPackage, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let MigrationPackage { mut vm, cloudlets, origin } = package;
        let id = vm.id;
        if matches!(self.routes.get(&id), Some(r) if !matches!(r, Route::Remote(_))) {
            return Err(Fault::new(format!("migrated vm {id} already known here")));
        }
        vm.state = VmState::Requested;
        let returned = match self.place(vm, now) {
            Ok(_) => {
                let v = self.resident_vm(id).clone();
                self.charge_creation(&v);
                for c in cloudlets {
                    self.submit_local(id, c)?;
                }
                None
            }
            Err((vm, _)) => Some(Box::new(MigrationPackage { vm, cloudlets, origin })),
        };
        let msg = Msg::MigrateAck { vm: id, dc: ctx.id(), returned };
        ctx.send(origin, self.latency(origin), Tag::MigrateAck, msg)?;
        Ok(())
    }

    fn on_migrate_ack(&mut self, vm: VmId, dc: EntityId, returned: Option<MigrationPackage>, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let Some(Route::Outbound { to, since, moved, held, destroy }) = self.routes.remove(&vm) else {
            return Err(Fault::new(format!("migration ack for vm {vm} that is not in transit")));
        };
        debug_assert_eq!(to, dc);
        match returned {
            None => {
                self.migrations.push(MigrationRecord {
                    time: since,
                    vm,
                    from: ctx.id(),
                    to,
                    cloudlets_moved: moved,
                });
                let lat = self.latency(to);
                for c in held {
                    let msg = Msg::CloudletSubmit {
                        cloudlet: Box::new(c),
                        ack: false,
                    };
                    ctx.send(to, lat, Tag::CloudletSubmit, msg)?;
                }
                if destroy {
                    ctx.send(to, lat, Tag::VmDestroy, Msg::VmDestroy(vm))?;
                } else {
                    self.routes.insert(vm, Route::Remote(to));
                }
            }
            Some(pkg) => {
                self.warnings.push(format!("t={now}: data center {dc} refused vm {vm}; kept at origin"));
                let mut work = pkg.cloudlets;
                work.extend(held);
                if destroy {
                    for c in work {
                        self.fail_cloudlet(c, ctx)?;
                    }
                    return Ok(());
                }
                let mut v = pkg.vm;
                v.state = VmState::Requested;
                let behind_queue = !self.pending_vms.is_empty();
                match if behind_queue { Err((v, RejectReason::NoCores)) } else { self.place(v, now) } {
                    Ok(_) => {
                        for c in work {
                            self.submit_local(vm, c)?;
                        }
                    }
                    Err((v, _)) if self.cfg.queueing && self.could_ever_fit(&v.spec) => self.enqueue(v, work, false),
                    Err((_, reason)) => {
                        self.warnings.push(format!("t={now}: vm {vm} lost its place ({reason}); its cloudlets fail"));
                        for c in work {
                            self.fail_cloudlet(c, ctx)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn report_load(&mut self, now: SimTime, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let Some(hook) = self.cfg.federation.clone() else {
            return Ok(());
        };
        let report = self.load_report(ctx.id(), &hook.reference_vm, now);
        self.last_report = Some(report);
        ctx.send(hook.coordinator, 0.0, Tag::SensorReport, Msg::SensorReport(report))?;
        Ok(())
    }
}

impl Entity<Msg> for Datacenter {
    fn handle(&mut self, event: Event<Msg>, ctx: &mut Context<'_, Msg>) -> Result<(), Fault> {
        let now = ctx.now();
        match (event.tag, event.payload) {
            (Tag::Start, _) => {
                let chars = Box::new(self.characteristics.clone());
                ctx.send(self.cfg.cis, 0.0, Tag::Register, Msg::Register(chars))?;
                if let Some(hook) = &self.cfg.federation {
                    let period = hook.sensor_period;
                    self.report_load(now, ctx)?;
                    ctx.send(ctx.id(), period, Tag::SensorTick, Msg::Empty)?;
                }
                return Ok(());
            }
            (Tag::SensorTick, _) => {
                self.advance(now, ctx)?;
                self.report_load(now, ctx)?;
                if let Some(hook) = &self.cfg.federation {
                    ctx.send(ctx.id(), hook.sensor_period, Tag::SensorTick, Msg::Empty)?;
                }
            }
            (Tag::InternalUpdate, _) => {
                self.scheduled_updates.remove(&now);
            }
            (_, Msg::VmCreate { vm, ack }) => {
                self.advance(now, ctx)?;
                self.on_vm_create(vm, ack, now, ctx)?;
            }
            (_, Msg::CloudletSubmit { cloudlet, ack }) => {
                self.advance(now, ctx)?;
                self.on_submit(*cloudlet, ack, now, ctx)?;
            }
            (_, Msg::Staged(cloudlet)) => {
                self.advance(now, ctx)?;
                self.on_staged(*cloudlet, now, ctx)?;
            }
            (_, Msg::VmDestroy(vm)) => {
                self.advance(now, ctx)?;
                self.on_destroy(vm, now, ctx)?;
            }
            (_, Msg::ForwardCreate { vm, coordinator, origin }) => {
                self.advance(now, ctx)?;
                self.on_forward_create(vm, coordinator, origin, now, ctx)?;
            }
            (_, Msg::RouteUpdate { vm, dc, host }) => {
                self.advance(now, ctx)?;
                self.on_route_update(vm, dc, host, now, ctx)?;
            }
            (_, Msg::MigrateCommand { vm, to }) => {
                self.advance(now, ctx)?;
                self.on_migrate_command(vm, to, now, ctx)?;
            }
            (_, Msg::MigrateIn(pkg)) => {
                self.advance(now, ctx)?;
                self.on_migrate_in(*pkg, now, ctx)?;
            }
            (_, Msg::MigrateAck { vm, dc, returned }) => {
                self.advance(now, ctx)?;
                self.on_migrate_ack(vm, dc, returned.map(|b| *b), now, ctx)?;
            }
            (tag, _) => return Err(Fault::new(format!("data center cannot handle {tag}"))),
        }
        self.settle(now, ctx)
    }
}
