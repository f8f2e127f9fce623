//! Invoice laws and end-to-end billing.

mod common;

use common::{scenario, Dc, Federation, User};
use dcsim::kernel::EntityId;
use dcsim::market::{charge_cloudlet, charge_vm_creation, invoices_by_owner, CostKind, CostRates, Invoice, LineItem};
use dcsim::model::{Cloudlet, CloudletId, CloudletStatus, Vm, VmId, VmSpec};
use dcsim::scenario::run_scenario;
use dcsim::scheduling::SchedulingPolicy;
use proptest::prelude::*;

fn rates() -> impl Strategy<Value = CostRates> {
    (0.0f64..5.0, 0.0f64..1.0, 0.0f64..0.1, 0.0f64..1e-3).prop_map(|(s, m, st, bw)| CostRates {
        cost_per_sec: s,
        cost_per_mem: m,
        cost_per_storage: st,
        cost_per_bw: bw,
    })
}

#[derive(Clone, Debug)]
struct Usage {
    vms: Vec<(u64, u64)>,
    tasks: Vec<(f64, u64, u64)>,
}

fn usage() -> impl Strategy<Value = Usage> {
    (
        prop::collection::vec((1u64..4096, 1u64..100_000), 0..5),
        prop::collection::vec((0.0f64..5000.0, 0u64..1_000_000, 0u64..1_000_000), 0..8),
    )
        .prop_map(|(vms, tasks)| Usage { vms, tasks })
}

fn items(r: &CostRates, u: &Usage) -> Vec<LineItem> {
    let owner = EntityId(1);
    let mut out = Vec::new();
    for (i, &(ram, storage)) in u.vms.iter().enumerate() {
        let spec = VmSpec { cores: 1, mips: 1000.0, ram_mb: ram, storage_mb: storage };
        out.extend(charge_vm_creation(r, &Vm::new(VmId(i as u32), owner, spec, SchedulingPolicy::SpaceShared)));
    }
    for (i, &(cpu, input, output)) in u.tasks.iter().enumerate() {
        let mut c = Cloudlet::new(CloudletId(i as u32), owner, VmId(0), 1.0, input, output);
        c.status = CloudletStatus::Finished;
        c.cpu_time = cpu;
        out.extend(charge_cloudlet(r, &c).unwrap());
    }
    out
}

fn total(items: &[LineItem]) -> f64 {
    invoices_by_owner(items.iter().copied()).values().map(|i| i.total).sum()
}

proptest! {
    #[test]
    fn merged_invoice_total_is_sum_of_parts(r in rates(), a in usage(), b in usage()) {
        let owner = EntityId(1);
        let mut left = Invoice::new(owner);
        items(&r, &a).into_iter().for_each(|i| left.push(i));
        let mut right = Invoice::new(owner);
        items(&r, &b).into_iter().for_each(|i| right.push(i));
        let expected = left.total + right.total;
        left.merge(right);
        prop_assert!((left.total - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn raising_a_rate_never_lowers_the_total(r in rates(), u in usage(), which in 0usize..4, bump in 0.0f64..2.0) {
        let mut higher = r;
        match which {
            0 => higher.cost_per_sec += bump,
            1 => higher.cost_per_mem += bump,
            2 => higher.cost_per_storage += bump,
            _ => higher.cost_per_bw += bump,
        }
        prop_assert!(total(&items(&higher, &u)) >= total(&items(&r, &u)));
    }

    #[test]
    fn every_amount_is_quantity_times_rate(r in rates(), u in usage()) {
        for i in items(&r, &u) {
            prop_assert!(i.amount >= 0.0);
            prop_assert_eq!(i.amount, i.quantity * i.rate);
        }
    }
}

#[test]
fn idle_vms_cost_only_memory_and_storage() {
    let dcs = [Dc::new("dc", "space-shared").hosts(4, &[1000.0], 2048)];
    let users = [User::new("u", 3, 1, 1000.0, 512, "space-shared").tasks(1000.0, &[])];
    let report = run_scenario(&scenario(&dcs, &users, None)).unwrap();
    assert!(report.rows.is_empty());
    let kinds: Vec<CostKind> = report.invoices.iter().map(|i| i.kind).collect();
    assert_eq!(kinds.iter().filter(|k| **k == CostKind::Mem).count(), 3);
    assert_eq!(kinds.iter().filter(|k| **k == CostKind::Storage).count(), 3);
    let cpu_bw: f64 = report.invoices.iter().filter(|i| matches!(i.kind, CostKind::Cpu | CostKind::Bw)).map(|i| i.amount).sum();
    assert_eq!(cpu_bw, 0.0);
    // 3 x (512 MB x 0.05 + 1024 MB x 0.001)
    assert!((report.total_cost["u"] - 3.0 * (25.6 + 1.024)).abs() < 1e-9);
}

#[test]
fn migrated_cloudlet_is_billed_once_per_second_across_datacenters() {
    let dcs = [
        Dc::new("a", "space-shared").hosts(1, &[1000.0], 2048),
        Dc::new("b", "space-shared").hosts(1, &[1000.0], 2048),
    ];
    let users = [User::new("u", 1, 1, 1000.0, 512, "space-shared").at("a").tasks(1.0e6, &[0]).io(300_000)];
    let fed = Federation {
        delay: 0.0,
        latency: 0.0,
        use_exchange: true,
        migrations: vec![(400.0, "u".into(), 0, "b".into())],
    };
    let report = run_scenario(&scenario(&dcs, &users, Some(&fed))).unwrap();
    let cpu: Vec<_> = report.invoices.iter().filter(|i| i.kind == CostKind::Cpu).collect();
    let billed: f64 = cpu.iter().map(|i| i.quantity).sum();
    assert!((billed - report.rows[0].cpu_time).abs() < 1e-9);
    assert!(cpu.iter().any(|i| i.dc == "a" && (i.quantity - 400.0).abs() < 1e-9));
    assert!(cpu.iter().any(|i| i.dc == "b" && (i.quantity - 600.0).abs() < 1e-9));
    let bw: f64 = report.invoices.iter().filter(|i| i.kind == CostKind::Bw).map(|i| i.quantity).sum();
    assert_eq!(bw, 600_000.0);
}
