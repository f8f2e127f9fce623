//! Host selection for incoming VM requests.

use crate::host::{Host, RejectReason};
use crate::kernel::SimTime;
use crate::model::{HostId, Vm, VmSpec};

/// Chooses a host for a VM. Implementations must be deterministic.
pub trait VmProvisioner {
    fn select_host(&self, hosts: &[Host], spec: &VmSpec) -> Result<usize, RejectReason>;
}

/// First-come-first-serve, first-fit: the lowest-indexed host with enough
/// free cores, memory and storage wins.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstFit;

impl VmProvisioner for FirstFit {
    fn select_host(&self, hosts: &[Host], spec: &VmSpec) -> Result<usize, RejectReason> {
        // Report the check the most promising host failed.
        let mut furthest = RejectReason::NoCores;
        for (i, h) in hosts.iter().enumerate() {
            match h.check_fit(spec) {
                Ok(()) => return Ok(i),
                Err(reason) => furthest = furthest.max(reason),
            }
        }
        Err(furthest)
    }
}

/// Places `vm` with the given policy. On failure the VM is handed back.
pub fn provision_vm(
    provisioner: &dyn VmProvisioner,
    hosts: &mut [Host],
    vm: Vm,
    now: SimTime,
    record_rates: bool,
) -> Result<HostId, (Vm, RejectReason)> {
    match provisioner.select_host(hosts, &vm.spec) {
        Ok(i) => {
            let id = hosts[i].id;
            hosts[i].allocate(vm, now, record_rates)?;
            Ok(id)
        }
        Err(reason) => Err((vm, reason)),
    }
}

/// [`provision_vm`] with the default first-fit policy.
pub fn provision_vm_fcfs(hosts: &mut [Host], vm: Vm, now: SimTime) -> Result<HostId, (Vm, RejectReason)> {
    provision_vm(&FirstFit, hosts, vm, now, false)
}

/// Number of hosts that could take one more VM of `spec` right now.
pub fn free_slots(hosts: &[Host], spec: &VmSpec) -> usize {
    hosts.iter().filter(|h| h.check_fit(spec).is_ok()).count()
}
