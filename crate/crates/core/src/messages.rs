//! Event payloads exchanged by the cloud entities.

use serde::Serialize;

use crate::host::RejectReason;
use crate::kernel::{EntityId, SimTime};
use crate::model::{Cloudlet, CloudletId, DatacenterCharacteristics, HostId, Vm, VmId, VmSpec};

/// Availability snapshot of one data center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LoadReport {
    pub dc: EntityId,
    /// Hosts that could take one more VM of the reference spec right now.
    pub free_slot_estimate: u32,
    /// In `[0, 1]`.
    pub busy_ratio: f64,
    pub host_count: u32,
    pub timestamp: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum CreateFailure {
    #[error("rejected: {0}")]
    Rejected(RejectReason),
    /// Overflow was attempted and no federation member had room.
    #[error("no federated data center has capacity")]
    NoCapacity,
    #[error("VM creation quota exhausted")]
    QuotaExceeded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VmCreateAck {
    pub vm: VmId,
    /// Data center that answered; for a forwarded VM, the one that placed it.
    pub dc: EntityId,
    pub result: Result<HostId, CreateFailure>,
}

/// A running VM in transit between data centers, with its unfinished work.
#[derive(Clone, Debug)]
pub struct MigrationPackage {
    pub vm: Vm,
    pub cloudlets: Vec<Cloudlet>,
    pub origin: EntityId,
}

#[derive(Clone, Debug, Default)]
pub enum Msg {
    #[default]
    Empty,
    Register(Box<DatacenterCharacteristics>),
    DcListRequest(VmSpec),
    DcList(Vec<EntityId>),
    VmCreate {
        vm: Vm,
        ack: bool,
    },
    VmCreateAck(VmCreateAck),
    CloudletSubmit {
        cloudlet: Box<Cloudlet>,
        ack: bool,
    },
    /// Cloudlet whose input finished staging through the SAN.
    Staged(Box<Cloudlet>),
    CloudletSubmitAck {
        cloudlet: CloudletId,
        accepted: bool,
    },
    CloudletReturn(Box<Cloudlet>),
    VmDestroy(VmId),
    SubmitBatch(usize),
    SensorReport(LoadReport),
    /// A data center could not place a broker's VM.
    Overflow(Vm),
    PlacementQuery {
        vm: VmId,
        spec: VmSpec,
        exclude: Vec<EntityId>,
    },
    PlacementReply {
        vm: VmId,
        target: Option<EntityId>,
    },
    /// Coordinator asks a peer data center to host a VM that overflowed at
    /// `origin`.
    ForwardCreate {
        vm: Vm,
        coordinator: EntityId,
        origin: EntityId,
    },
    /// Peer data center's answer to [`Msg::ForwardCreate`].
    ForwardResult {
        vm: Vm,
        dc: EntityId,
        host: Option<HostId>,
    },
    /// Where an overflowed VM ended up; `None` if nowhere.
    RouteUpdate {
        vm: VmId,
        dc: Option<EntityId>,
        host: Option<HostId>,
    },
    /// Move a running VM to the data center `to`.
    MigrateCommand {
        vm: VmId,
        to: EntityId,
    },
    MigrateIn(Box<MigrationPackage>),
    /// `returned` carries the package back when the destination refused it.
    MigrateAck {
        vm: VmId,
        dc: EntityId,
        returned: Option<Box<MigrationPackage>>,
    },
    BrokerDone(EntityId),
}
