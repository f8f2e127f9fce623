//! Physical hosts and the VMs resident on them.

use serde::Serialize;

use crate::kernel::SimTime;
use crate::model::{Cloudlet, HostId, PeSpec, Vm, VmId, VmSpec, VmState};
use crate::scheduling::{time_shared_shares, CloudletScheduler, MipsShare, SchedulingError, SchedulingPolicy, VmDemand};

/// Why a host (or a whole data center) turned a VM away. Variants are ordered
/// by how far the check got: cores are checked first, then RAM, then storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, thiserror::Error)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    #[error("no host has enough free cores")]
    NoCores,
    #[error("no host has enough free memory")]
    NoRam,
    #[error("no host has enough free storage")]
    NoStorage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CoreOwner {
    Free,
    Vm(VmId),
    Background,
}

/// A VM placed on a host together with its cloudlet scheduler.
#[derive(Clone, Debug)]
pub struct Resident {
    pub vm: Vm,
    pub scheduler: CloudletScheduler,
    pub share: MipsShare,
    cores: Vec<u32>,
}

/// Cloudlets retired by a host update and the next instant one will finish.
#[derive(Debug, Default)]
pub struct HostUpdate {
    pub finished: Vec<Cloudlet>,
    pub next_completion: Option<SimTime>,
}

#[derive(Clone, Debug)]
pub struct Host {
    pub id: HostId,
    core_mips: Vec<f64>,
    ram_mb: u64,
    storage_mb: u64,
    bw: u64,
    ram_used: u64,
    storage_used: u64,
    policy: SchedulingPolicy,
    // Only populated under space-shared VM scheduling.
    owners: Vec<CoreOwner>,
    reserved: bool,
    residents: Vec<Resident>,
}

impl Host {
    pub fn new(id: HostId, cores: &[PeSpec], ram_mb: u64, storage_mb: u64, bw: u64, policy: SchedulingPolicy) -> Self {
        let owners = match policy {
            SchedulingPolicy::SpaceShared => vec![CoreOwner::Free; cores.len()],
            SchedulingPolicy::TimeShared => Vec::new(),
        };
        Host {
            id,
            core_mips: cores.iter().map(|p| p.mips).collect(),
            ram_mb,
            storage_mb,
            bw,
            ram_used: 0,
            storage_used: 0,
            policy,
            owners,
            reserved: false,
            residents: Vec::new(),
        }
    }

    pub fn policy(&self) -> SchedulingPolicy {
        self.policy
    }

    pub fn core_mips(&self) -> &[f64] {
        &self.core_mips
    }

    pub fn capacity_mips(&self) -> f64 {
        self.core_mips.iter().sum()
    }

    pub fn ram_mb(&self) -> u64 {
        self.ram_mb
    }

    pub fn storage_mb(&self) -> u64 {
        self.storage_mb
    }

    pub fn bw(&self) -> u64 {
        self.bw
    }

    pub fn ram_used(&self) -> u64 {
        self.ram_used
    }

    pub fn storage_used(&self) -> u64 {
        self.storage_used
    }

    /// Cores granted under space-shared scheduling (background included).
    pub fn cores_granted(&self) -> usize {
        self.owners.iter().filter(|o| **o != CoreOwner::Free).count()
    }

    pub fn is_reserved(&self) -> bool {
        self.reserved
    }

    pub fn residents(&self) -> &[Resident] {
        &self.residents
    }

    pub fn resident(&self, vm: VmId) -> Option<&Resident> {
        self.residents.iter().find(|r| r.vm.id == vm)
    }

    pub fn resident_mut(&mut self, vm: VmId) -> Option<&mut Resident> {
        self.residents.iter_mut().find(|r| r.vm.id == vm)
    }

    pub fn is_idle(&self) -> bool {
        self.residents.is_empty()
    }

    /// Marks the host as fully taken by load outside the simulation.
    pub fn reserve_background(&mut self) {
        debug_assert!(self.residents.is_empty());
        self.reserved = true;
        for o in &mut self.owners {
            *o = CoreOwner::Background;
        }
        self.ram_used = self.ram_mb;
        self.storage_used = self.storage_mb;
    }

    fn cores_fit(&self, spec: &VmSpec, only_free: bool) -> bool {
        match self.policy {
            SchedulingPolicy::SpaceShared => {
                let usable = self
                    .core_mips
                    .iter()
                    .zip(&self.owners)
                    .filter(|(mips, owner)| **mips >= spec.mips && (!only_free || **owner == CoreOwner::Free))
                    .count();
                usable >= spec.cores as usize
            }
            // Time sharing never refuses CPU, but a VM still needs as many
            // physical cores as it has virtual ones, each fast enough.
            SchedulingPolicy::TimeShared => {
                spec.cores as usize <= self.core_mips.len() && self.core_mips.iter().any(|&m| m >= spec.mips)
            }
        }
    }

    /// Checks whether the VM fits in what is free right now.
    pub fn check_fit(&self, spec: &VmSpec) -> Result<(), RejectReason> {
        if !self.cores_fit(spec, true) {
            return Err(RejectReason::NoCores);
        }
        if self.ram_used + spec.ram_mb > self.ram_mb {
            return Err(RejectReason::NoRam);
        }
        if self.storage_used + spec.storage_mb > self.storage_mb {
            return Err(RejectReason::NoStorage);
        }
        Ok(())
    }

    /// Whether the VM could ever be placed here once other VMs leave.
    pub fn fits_when_empty(&self, spec: &VmSpec) -> bool {
        !self.reserved && self.cores_fit(spec, false) && spec.ram_mb <= self.ram_mb && spec.storage_mb <= self.storage_mb
    }

    /// Places the VM. On time-shared hosts this changes every resident's
    /// share, so callers advance the host to `now` beforehand.
    pub fn allocate(&mut self, mut vm: Vm, now: SimTime, record_rates: bool) -> Result<(), (Vm, RejectReason)> {
        if let Err(reason) = self.check_fit(&vm.spec) {
            return Err((vm, reason));
        }
        let mut cores = Vec::new();
        if self.policy == SchedulingPolicy::SpaceShared {
            for (i, mips) in self.core_mips.iter().enumerate() {
                if cores.len() == vm.spec.cores as usize {
                    break;
                }
                if self.owners[i] == CoreOwner::Free && *mips >= vm.spec.mips {
                    cores.push(i as u32);
                }
            }
            for &i in &cores {
                self.owners[i as usize] = CoreOwner::Vm(vm.id);
            }
        }
        self.ram_used += vm.spec.ram_mb;
        self.storage_used += vm.spec.storage_mb;
        vm.host = Some(self.id);
        vm.state = VmState::Running;
        let scheduler = CloudletScheduler::new(vm.cloudlet_policy, now).with_rate_log(record_rates);
        self.residents.push(Resident {
            vm,
            scheduler,
            share: MipsShare::default(),
            cores,
        });
        self.recompute_shares();
        Ok(())
    }

    /// Removes the VM and releases its grants.
    pub fn deallocate(&mut self, vm: VmId) -> Option<Resident> {
        let pos = self.residents.iter().position(|r| r.vm.id == vm)?;
        let mut resident = self.residents.remove(pos);
        for &i in &resident.cores {
            self.owners[i as usize] = CoreOwner::Free;
        }
        self.ram_used -= resident.vm.spec.ram_mb;
        self.storage_used -= resident.vm.spec.storage_mb;
        resident.vm.host = None;
        self.recompute_shares();
        Some(resident)
    }

    fn recompute_shares(&mut self) {
        match self.policy {
            SchedulingPolicy::SpaceShared => {
                for r in &mut self.residents {
                    r.share = MipsShare(r.cores.iter().map(|&i| self.core_mips[i as usize]).collect());
                }
            }
            SchedulingPolicy::TimeShared => {
                let demands: Vec<VmDemand> = self
                    .residents
                    .iter()
                    .map(|r| VmDemand {
                        cores: r.vm.spec.cores,
                        mips: r.vm.spec.mips,
                    })
                    .collect();
                for (r, share) in self.residents.iter_mut().zip(time_shared_shares(&self.core_mips, &demands)) {
                    r.share = share;
                }
            }
        }
    }

    /// Brings every resident VM's cloudlets up to `now` and reports the
    /// earliest upcoming completion on this host.
    pub fn update_vms_processing(&mut self, now: SimTime) -> Result<HostUpdate, SchedulingError> {
        let mut out = HostUpdate::default();
        for r in &mut self.residents {
            let o = r.scheduler.update(now, &r.share)?;
            out.finished.extend(o.finished);
            out.next_completion = min_time(out.next_completion, o.next_completion);
        }
        Ok(out)
    }

    /// Sum of the current execution rates of all cloudlets on the host.
    pub fn assigned_mips(&self) -> f64 {
        self.residents.iter().flat_map(|r| r.scheduler.rates().map(|(_, rate)| rate)).sum()
    }
}

pub(crate) fn min_time(a: Option<SimTime>, b: Option<SimTime>) -> Option<SimTime> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}
