//! Turns a scenario description into registered entities and runs it.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::datacenter::{Datacenter, DatacenterConfig, FederationHook};
use crate::error::{RunError, ScenarioError};
use crate::federation::{Batch, Broker, BrokerConfig, Cis, CloudExchange, Coordinator, CoordinatorConfig, FederationTopology, ShutdownMonitor};
use crate::host::Host;
use crate::kernel::{EntityId, Simulation, Tag};
use crate::memory;
use crate::messages::Msg;
use crate::model::{Cloudlet, CloudletId, DatacenterCharacteristics, HostClass, HostId, PeSpec, SanStorage, Vm, VmId};

use super::report::{ProfileRow, RunReport};
use super::spec::{Binding, DatacenterSpec, ScenarioSpec};

/// Entity ids assigned to each part of a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub cis: EntityId,
    pub dcs: Vec<EntityId>,
    pub exchange: Option<EntityId>,
    /// Per data center, in data center order.
    pub coordinators: Vec<Option<EntityId>>,
    pub brokers: Vec<EntityId>,
    pub monitor: EntityId,
    /// Id of each broker's first VM.
    pub vm_base: Vec<u32>,
    /// Batch index of every cloudlet.
    pub batch_of: BTreeMap<CloudletId, usize>,
}

impl Layout {
    fn plan(spec: &ScenarioSpec) -> Layout {
        let members = spec.member_indices();
        let mut next = 0u32;
        let mut take = || {
            let id = EntityId(next);
            next += 1;
            id
        };
        let cis = take();
        let dcs: Vec<EntityId> = spec.datacenters.iter().map(|_| take()).collect();
        let exchange = (spec.federation.enabled && spec.federation.use_exchange && !members.is_empty()).then(&mut take);
        let mut coordinators = vec![None; dcs.len()];
        for &m in &members {
            coordinators[m] = Some(take());
        }
        let brokers = spec.brokers.iter().map(|_| take()).collect();
        let monitor = take();
        let mut vm_base = Vec::new();
        let mut base = 0;
        for b in &spec.brokers {
            vm_base.push(base);
            base += b.vms.count;
        }
        Layout {
            cis,
            dcs,
            exchange,
            coordinators,
            brokers,
            monitor,
            vm_base,
            batch_of: BTreeMap::new(),
        }
    }

    pub fn dc_name<'a>(&self, spec: &'a ScenarioSpec, id: EntityId) -> Option<&'a str> {
        let i = self.dcs.iter().position(|&d| d == id)?;
        Some(&spec.datacenters[i].name)
    }

    pub fn broker_name<'a>(&self, spec: &'a ScenarioSpec, id: EntityId) -> Option<&'a str> {
        let i = self.brokers.iter().position(|&b| b == id)?;
        Some(&spec.brokers[i].name)
    }
}

/// Hosts of one data center, homogeneous block first. The lowest
/// `initial_busy_hosts` indices are reserved.
pub fn build_hosts(d: &DatacenterSpec) -> Result<Vec<Host>, String> {
    let total = d.total_hosts() as usize;
    let mut hosts = Vec::new();
    hosts.try_reserve_exact(total).map_err(|e| format!("cannot allocate {total} hosts: {e}"))?;
    let block: Vec<PeSpec> = (0..d.cores_per_host).filter_map(|_| PeSpec::new(d.mips_per_core)).collect();
    for _ in 0..d.host_count {
        let id = HostId(hosts.len() as u32);
        hosts.push(Host::new(id, &block, d.ram_mb, d.storage_mb, d.bw, d.vm_scheduler));
    }
    for g in &d.host_groups {
        let pes: Vec<PeSpec> = g.core_mips.iter().filter_map(|&m| PeSpec::new(m)).collect();
        for _ in 0..g.count {
            let id = HostId(hosts.len() as u32);
            hosts.push(Host::new(id, &pes, g.ram_mb, g.storage_mb, g.bw, d.vm_scheduler));
        }
    }
    for h in hosts.iter_mut().take(d.initial_busy_hosts as usize) {
        h.reserve_background();
    }
    Ok(hosts)
}

pub fn characteristics(d: &DatacenterSpec, dc_id: EntityId) -> DatacenterCharacteristics {
    let mut host_classes = Vec::new();
    if d.host_count > 0 {
        host_classes.push(HostClass {
            count: d.host_count,
            cores: d.cores_per_host,
            mips: d.mips_per_core,
            ram_mb: d.ram_mb,
            storage_mb: d.storage_mb,
        });
    }
    for g in &d.host_groups {
        host_classes.push(HostClass {
            count: g.count,
            cores: g.core_mips.len() as u32,
            // Conservative: a class is advertised at its slowest core.
            mips: g.core_mips.iter().copied().fold(f64::INFINITY, f64::min),
            ram_mb: g.ram_mb,
            storage_mb: g.storage_mb,
        });
    }
    DatacenterCharacteristics {
        dc_id,
        name: d.name.clone(),
        host_classes,
        vm_policy: d.vm_scheduler,
        costs: d.costs,
    }
}

/// A scenario ready to run: the simulation plus where everything lives.
pub struct BuiltScenario {
    pub sim: Simulation<Msg>,
    pub layout: Layout,
    pub spec: ScenarioSpec,
    pub profile: ProfileRow,
}

fn topology(spec: &ScenarioSpec, layout: &Layout) -> FederationTopology {
    let members = spec.member_indices();
    let mut t = FederationTopology::new(members.iter().map(|&m| layout.dcs[m]).collect());
    for (r, row) in spec.federation.link_latency.iter().enumerate() {
        for (c, &secs) in row.iter().enumerate() {
            if let (Some(&a), Some(&b)) = (members.get(r), members.get(c)) {
                t.set(layout.dcs[a], layout.dcs[b], secs);
            }
        }
    }
    t
}

/// Registers every entity of `spec` and injects scheduled migrations.
pub fn build(spec: &ScenarioSpec) -> Result<BuiltScenario, ScenarioError> {
    spec.validate()?;
    let mut layout = Layout::plan(spec);
    let topo = topology(spec, &layout);
    let members = spec.member_indices();
    let reference = spec.reference_vm();
    let mut sim = Simulation::new(Msg::default);
    if spec.run.trace {
        sim.enable_trace();
    }
    let reg = |e: crate::kernel::SimError| ScenarioError::invalid("", e.to_string());

    sim.register("cis", Cis::new()).map_err(reg)?;
    let host_count: u64 = spec.datacenters.iter().map(DatacenterSpec::total_hosts).sum();
    let started = Instant::now();
    let (built_dcs, bytes, method) = memory::measure(|| -> Result<Vec<Datacenter>, String> {
        let mut out = Vec::with_capacity(spec.datacenters.len());
        for (i, d) in spec.datacenters.iter().enumerate() {
            let id = layout.dcs[i];
            let mut cfg = DatacenterConfig::new(layout.cis);
            cfg.costs = d.costs;
            cfg.queueing = d.queueing;
            cfg.record_rates = spec.run.record_rates;
            cfg.migration_delay = spec.federation.migration_delay;
            cfg.san = d.san.as_ref().map(|s| SanStorage::new(s.capacity_mb, s.bandwidth, s.latency));
            if let Some(coord) = layout.coordinators[i] {
                cfg.federation = Some(FederationHook {
                    coordinator: coord,
                    sensor_period: spec.federation.sensor_period,
                    reference_vm: reference,
                });
                cfg.links = topo.links_from(id);
            }
            let hosts = build_hosts(d)?;
            out.push(Datacenter::new(&d.name, cfg, hosts, characteristics(d, id)));
        }
        Ok(out)
    });
    let build_seconds = started.elapsed().as_secs_f64();
    let dcs = built_dcs.map_err(|e| ScenarioError::invalid("datacenters", e))?;
    for (i, dc) in dcs.into_iter().enumerate() {
        let name = spec.datacenters[i].name.clone();
        sim.register(&name, dc).map_err(reg)?;
    }
    if let Some(ex) = layout.exchange {
        let id = sim.register("exchange", CloudExchange::new()).map_err(reg)?;
        debug_assert_eq!(id, ex);
    }
    for &m in &members {
        let home = layout.dcs[m];
        let peers = members
            .iter()
            .filter(|&&p| p != m)
            .map(|&p| (layout.coordinators[p].expect("member has a coordinator"), layout.dcs[p]))
            .collect();
        let cfg = CoordinatorConfig {
            home,
            exchange: layout.exchange,
            peers,
            topology: topo.clone(),
        };
        let name = format!("{}.coordinator", spec.datacenters[m].name);
        sim.register(&name, Coordinator::new(cfg)).map_err(reg)?;
    }

    let mut next_cloudlet = 0u32;
    for (bi, b) in spec.brokers.iter().enumerate() {
        let owner = layout.brokers[bi];
        let base = layout.vm_base[bi];
        let vms: Vec<Vm> = (0..b.vms.count)
            .map(|k| Vm::new(VmId(base + k), owner, b.vms.spec(), b.vms.cloudlet_scheduler))
            .collect();
        let c = &b.cloudlets;
        let cloudlets: Vec<Cloudlet> = (0..c.count)
            .map(|k| {
                let vm_index = match c.binding {
                    Binding::RoundRobin => k % b.vms.count,
                    Binding::Explicit => c.bindings[k as usize],
                };
                let id = CloudletId(next_cloudlet + k);
                Cloudlet::new(id, owner, VmId(base + vm_index), c.length_mi, c.input_bytes, c.output_bytes)
            })
            .collect();
        let mut batches = Vec::new();
        if c.schedule.is_empty() {
            batches.push(Batch {
                offset: 0.0,
                cloudlets: (0..c.count as usize).collect(),
            });
        } else {
            let mut k = 0usize;
            for s in &c.schedule {
                batches.push(Batch {
                    offset: s.offset,
                    cloudlets: (k..k + s.size as usize).collect(),
                });
                k += s.size as usize;
            }
        }
        for (bn, batch) in batches.iter().enumerate() {
            for &k in &batch.cloudlets {
                layout.batch_of.insert(cloudlets[k].id, bn);
            }
        }
        next_cloudlet += c.count;
        let cfg = BrokerConfig {
            cis: layout.cis,
            monitor: layout.monitor,
            preferred_dc: b.datacenter.as_ref().and_then(|n| spec.dc_index(n)).map(|i| layout.dcs[i]),
            confirm_vm_create: b.confirm_vm_create,
            confirm_cloudlet_submit: b.confirm_cloudlet_submit,
            vm_quota: b.vm_quota,
        };
        sim.register(&b.name, Broker::new(cfg, vms, cloudlets, batches)).map_err(reg)?;
    }
    sim.register("shutdown", ShutdownMonitor::new(spec.brokers.len())).map_err(reg)?;

    for m in &spec.federation.migrations {
        let bi = spec.brokers.iter().position(|b| b.name == m.broker).expect("validated");
        let home_dc = spec.brokers[bi].datacenter.as_ref().and_then(|n| spec.dc_index(n)).unwrap_or(0);
        let to = layout.dcs[spec.dc_index(&m.to).expect("validated")];
        let vm = VmId(layout.vm_base[bi] + m.vm_index);
        let dst = layout.coordinators[home_dc].unwrap_or(layout.dcs[home_dc]);
        sim.inject(m.at, dst, Tag::MigrateRequest, Msg::MigrateCommand { vm, to })
            .map_err(|e| ScenarioError::invalid("federation.migrations", e.to_string()))?;
    }

    Ok(BuiltScenario {
        sim,
        layout,
        spec: spec.clone(),
        profile: ProfileRow {
            host_count,
            build_seconds,
            peak_resident_bytes: bytes,
            method: method.to_string(),
            error: None,
        },
    })
}

impl BuiltScenario {
    pub fn datacenter(&self, i: usize) -> &Datacenter {
        self.sim.entity::<Datacenter>(self.layout.dcs[i]).expect("data center entity")
    }

    pub fn broker(&self, i: usize) -> &Broker {
        self.sim.entity::<Broker>(self.layout.brokers[i]).expect("broker entity")
    }

    pub fn coordinator(&self, dc: usize) -> Option<&Coordinator> {
        self.sim.entity::<Coordinator>(self.layout.coordinators[dc]?)
    }

    pub fn exchange(&self) -> Option<&CloudExchange> {
        self.sim.entity::<CloudExchange>(self.layout.exchange?)
    }

    pub fn cis(&self) -> &Cis {
        self.sim.entity::<Cis>(self.layout.cis).expect("information service entity")
    }

    /// Runs to completion and collects the report.
    pub fn run(mut self) -> Result<RunReport, RunError> {
        self.sim.run()?;
        let report = RunReport::collect(&self);
        report.verify().map_err(RunError::Report)?;
        Ok(report)
    }
}

/// Builds, runs and reports one scenario.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunReport, RunError> {
    build(spec)?.run()
}
