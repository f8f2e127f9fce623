//! Domain types of a virtualized data center: VMs, cloudlets, storage and the
//! characteristics a data center advertises.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kernel::{EntityId, SimTime};
use crate::market::CostRates;
use crate::scheduling::SchedulingPolicy;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(HostId);
id_type!(VmId);
id_type!(CloudletId);

/// Processing element (one core).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSpec {
    pub mips: f64,
}

impl PeSpec {
    pub fn new(mips: f64) -> Option<Self> {
        (mips.is_finite() && mips > 0.0).then_some(PeSpec { mips })
    }
}

/// Resources a VM asks for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmSpec {
    pub cores: u32,
    /// Per-core MIPS.
    pub mips: f64,
    pub ram_mb: u64,
    pub storage_mb: u64,
}

impl VmSpec {
    pub fn total_mips(&self) -> f64 {
        self.cores as f64 * self.mips
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VmState {
    Requested,
    Running,
    Queued,
    Destroyed,
    Migrating,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Vm {
    pub id: VmId,
    pub owner: EntityId,
    pub spec: VmSpec,
    pub cloudlet_policy: SchedulingPolicy,
    pub host: Option<HostId>,
    pub state: VmState,
}

impl Vm {
    pub fn new(id: VmId, owner: EntityId, spec: VmSpec, cloudlet_policy: SchedulingPolicy) -> Self {
        Vm {
            id,
            owner,
            spec,
            cloudlet_policy,
            host: None,
            state: VmState::Requested,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CloudletStatus {
    Created,
    Queued,
    Running,
    Paused,
    Finished,
    Failed,
}

/// Interval of constant execution rate, kept when rate recording is on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateSegment {
    pub start: f64,
    pub end: f64,
    pub mips: f64,
}

impl RateSegment {
    pub fn work(&self) -> f64 {
        (self.end - self.start) * self.mips
    }
}

/// An application task unit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cloudlet {
    pub id: CloudletId,
    pub owner: EntityId,
    pub length_mi: f64,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub vm: VmId,
    pub remaining_mi: f64,
    pub status: CloudletStatus,
    pub submit_time: Option<SimTime>,
    pub start_time: Option<SimTime>,
    pub finish_time: Option<SimTime>,
    /// Seconds spent in the running state.
    pub cpu_time: f64,
    /// Part of `cpu_time` already invoiced by a data center the cloudlet left.
    pub billed_cpu_time: f64,
    /// Data center that finished (or failed) the cloudlet.
    pub dc: Option<EntityId>,
    pub rate_log: Option<Vec<RateSegment>>,
}

impl Cloudlet {
    pub fn new(id: CloudletId, owner: EntityId, vm: VmId, length_mi: f64, input_bytes: u64, output_bytes: u64) -> Self {
        Cloudlet {
            id,
            owner,
            length_mi,
            input_bytes,
            output_bytes,
            vm,
            remaining_mi: length_mi,
            status: CloudletStatus::Created,
            submit_time: None,
            start_time: None,
            finish_time: None,
            cpu_time: 0.0,
            billed_cpu_time: 0.0,
            dc: None,
            rate_log: None,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.status == CloudletStatus::Finished
    }

    /// Work done so far according to the recorded rate segments.
    pub fn logged_work(&self) -> Option<f64> {
        self.rate_log.as_ref().map(|log| log.iter().map(RateSegment::work).sum())
    }

    pub fn turnaround(&self) -> Option<f64> {
        Some(self.finish_time?.secs() - self.submit_time?.secs())
    }

    pub fn execution_time(&self) -> Option<f64> {
        Some(self.finish_time?.secs() - self.start_time?.secs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SanError {
    #[error("storage area network is full ({requested} MB requested, {free} MB free)")]
    Full { requested: u64, free: u64 },
    #[error("released more than is in use")]
    Underflow,
}

/// Storage area network attached to a data center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanStorage {
    pub capacity_mb: u64,
    #[serde(default)]
    pub used_mb: u64,
    /// Mbit/s.
    pub bandwidth: f64,
    /// Seconds.
    #[serde(default)]
    pub latency: f64,
}

impl SanStorage {
    pub fn new(capacity_mb: u64, bandwidth: f64, latency: f64) -> Self {
        SanStorage {
            capacity_mb,
            used_mb: 0,
            bandwidth,
            latency,
        }
    }

    pub fn free_mb(&self) -> u64 {
        self.capacity_mb - self.used_mb
    }

    pub fn allocate(&mut self, mb: u64) -> Result<(), SanError> {
        if mb > self.free_mb() {
            return Err(SanError::Full {
                requested: mb,
                free: self.free_mb(),
            });
        }
        self.used_mb += mb;
        Ok(())
    }

    pub fn release(&mut self, mb: u64) -> Result<(), SanError> {
        self.used_mb = self.used_mb.checked_sub(mb).ok_or(SanError::Underflow)?;
        Ok(())
    }

    /// Seconds to move `bytes` through the SAN: latency plus size over bandwidth.
    pub fn transfer_time(&self, bytes: u64) -> f64 {
        self.latency + (bytes as f64 * 8.0) / (self.bandwidth * 1e6)
    }
}

/// MB needed to hold `bytes`, rounded up.
pub fn bytes_to_mb(bytes: u64) -> u64 {
    bytes.div_ceil(1 << 20)
}

/// A run of identical hosts in a data center's advertised inventory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HostClass {
    pub count: u32,
    pub cores: u32,
    pub mips: f64,
    pub ram_mb: u64,
    pub storage_mb: u64,
}

impl HostClass {
    pub fn can_host(&self, spec: &VmSpec) -> bool {
        self.cores >= spec.cores && self.mips >= spec.mips && self.ram_mb >= spec.ram_mb && self.storage_mb >= spec.storage_mb
    }
}

/// What a data center publishes to the information service.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatacenterCharacteristics {
    pub dc_id: EntityId,
    pub name: String,
    pub host_classes: Vec<HostClass>,
    pub vm_policy: SchedulingPolicy,
    pub costs: CostRates,
}

impl DatacenterCharacteristics {
    /// Whether some host could hold the spec when empty.
    pub fn can_host(&self, spec: &VmSpec) -> bool {
        self.host_classes.iter().any(|c| c.can_host(spec))
    }

    pub fn host_count(&self) -> u64 {
        self.host_classes.iter().map(|c| c.count as u64).sum()
    }
}
