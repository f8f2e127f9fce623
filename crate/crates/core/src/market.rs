//! Usage-based cost accounting.
//!
//! A data center prices four resources. Memory and storage are charged once,
//! when a VM is created; processing is charged per second a cloudlet spends
//! running; bandwidth is charged per byte moved in and out with a cloudlet. A
//! VM that never runs anything therefore costs only memory and storage.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kernel::EntityId;
use crate::model::{Cloudlet, CloudletStatus, Vm};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRates {
    /// Per second of core time.
    #[serde(default)]
    pub cost_per_sec: f64,
    /// Per MB of VM memory.
    #[serde(default)]
    pub cost_per_mem: f64,
    /// Per MB of VM storage.
    #[serde(default)]
    pub cost_per_storage: f64,
    /// Per byte transferred.
    #[serde(default)]
    pub cost_per_bw: f64,
}

impl CostRates {
    pub fn is_valid(&self) -> bool {
        [self.cost_per_sec, self.cost_per_mem, self.cost_per_storage, self.cost_per_bw]
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CostKind {
    Mem,
    Storage,
    Bw,
    Cpu,
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostKind::Mem => "MEM",
            CostKind::Storage => "STORAGE",
            CostKind::Bw => "BW",
            CostKind::Cpu => "CPU",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineItem {
    pub owner: EntityId,
    pub kind: CostKind,
    pub quantity: f64,
    pub rate: f64,
    pub amount: f64,
}

impl LineItem {
    pub fn new(owner: EntityId, kind: CostKind, quantity: f64, rate: f64) -> Self {
        LineItem {
            owner,
            kind,
            quantity,
            rate,
            amount: quantity * rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarketError {
    #[error("cloudlet {0} has not finished")]
    Unfinished(u32),
}

/// Memory and storage charged when a VM is created.
pub fn charge_vm_creation(rates: &CostRates, vm: &Vm) -> [LineItem; 2] {
    [
        LineItem::new(vm.owner, CostKind::Mem, vm.spec.ram_mb as f64, rates.cost_per_mem),
        LineItem::new(vm.owner, CostKind::Storage, vm.spec.storage_mb as f64, rates.cost_per_storage),
    ]
}

/// Processing and transfer charged when a cloudlet finishes. Core time
/// already invoiced by another data center is excluded.
pub fn charge_cloudlet(rates: &CostRates, cloudlet: &Cloudlet) -> Result<[LineItem; 2], MarketError> {
    if cloudlet.status != CloudletStatus::Finished {
        return Err(MarketError::Unfinished(cloudlet.id.0));
    }
    let cpu = (cloudlet.cpu_time - cloudlet.billed_cpu_time).max(0.0);
    let bytes = (cloudlet.input_bytes + cloudlet.output_bytes) as f64;
    Ok([
        LineItem::new(cloudlet.owner, CostKind::Cpu, cpu, rates.cost_per_sec),
        LineItem::new(cloudlet.owner, CostKind::Bw, bytes, rates.cost_per_bw),
    ])
}

/// Core time accrued so far, billed when a cloudlet leaves for another data
/// center. Marks that time as billed.
pub fn charge_partial_cpu(rates: &CostRates, cloudlet: &mut Cloudlet) -> LineItem {
    let secs = (cloudlet.cpu_time - cloudlet.billed_cpu_time).max(0.0);
    cloudlet.billed_cpu_time = cloudlet.cpu_time;
    LineItem::new(cloudlet.owner, CostKind::Cpu, secs, rates.cost_per_sec)
}

/// Pluggable pricing. The default is [`UsageCharges`].
pub trait ChargePolicy {
    fn vm_creation(&self, rates: &CostRates, vm: &Vm) -> Vec<LineItem>;
    fn cloudlet(&self, rates: &CostRates, cloudlet: &Cloudlet) -> Result<Vec<LineItem>, MarketError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UsageCharges;

impl ChargePolicy for UsageCharges {
    fn vm_creation(&self, rates: &CostRates, vm: &Vm) -> Vec<LineItem> {
        charge_vm_creation(rates, vm).to_vec()
    }

    fn cloudlet(&self, rates: &CostRates, cloudlet: &Cloudlet) -> Result<Vec<LineItem>, MarketError> {
        Ok(charge_cloudlet(rates, cloudlet)?.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Invoice {
    pub owner: EntityId,
    pub items: Vec<LineItem>,
    pub total: f64,
}

impl Invoice {
    pub fn new(owner: EntityId) -> Self {
        Invoice {
            owner,
            items: Vec::new(),
            total: 0.0,
        }
    }

    pub fn push(&mut self, item: LineItem) {
        debug_assert_eq!(item.owner, self.owner);
        self.total += item.amount;
        self.items.push(item);
    }

    pub fn merge(&mut self, other: Invoice) {
        for item in other.items {
            self.push(item);
        }
    }

    pub fn total_of(&self, kind: CostKind) -> f64 {
        self.items.iter().filter(|i| i.kind == kind).map(|i| i.amount).sum()
    }
}

/// Groups line items into one invoice per owner.
pub fn invoices_by_owner(items: impl IntoIterator<Item = LineItem>) -> BTreeMap<EntityId, Invoice> {
    let mut out: BTreeMap<EntityId, Invoice> = BTreeMap::new();
    for item in items {
        out.entry(item.owner).or_insert_with(|| Invoice::new(item.owner)).push(item);
    }
    out
}
