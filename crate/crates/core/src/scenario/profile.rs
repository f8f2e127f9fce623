//! Instantiation profiler: how build time and memory grow with host count.

use std::time::Instant;

use crate::datacenter::{Datacenter, DatacenterConfig};
use crate::federation::Cis;
use crate::kernel::{EntityId, Simulation};
use crate::market::CostRates;
use crate::memory;
use crate::messages::Msg;
use crate::scheduling::SchedulingPolicy;

use super::build::{build_hosts, characteristics};
use super::report::ProfileRow;
use super::spec::DatacenterSpec;

/// The reference host: 1 core at 1000 MIPS, 1 GB RAM, 2 TB storage.
pub fn canonical_datacenter(host_count: u32) -> DatacenterSpec {
    DatacenterSpec {
        name: "dc".into(),
        host_count,
        cores_per_host: 1,
        mips_per_core: 1000.0,
        ram_mb: 1024,
        storage_mb: 2 * 1024 * 1024,
        bw: 10_000,
        vm_scheduler: SchedulingPolicy::SpaceShared,
        costs: CostRates::default(),
        queueing: false,
        initial_busy_hosts: 0,
        host_groups: Vec::new(),
        san: None,
    }
}

fn build_world(d: &DatacenterSpec) -> Result<Simulation<Msg>, String> {
    let mut sim = Simulation::new(Msg::default);
    let cis = sim.register("cis", Cis::new()).map_err(|e| e.to_string())?;
    let id: EntityId = sim.next_id();
    let hosts = build_hosts(d)?;
    let dc = Datacenter::new(&d.name, DatacenterConfig::new(cis), hosts, characteristics(d, id));
    sim.register(&d.name, dc).map_err(|e| e.to_string())?;
    Ok(sim)
}

/// Builds and tears down one canonical data center per count. A failed row
/// keeps its error and the remaining counts are still attempted.
pub fn profile_instantiation(host_counts: &[u64]) -> Result<Vec<ProfileRow>, String> {
    if host_counts.windows(2).any(|w| w[0] > w[1]) {
        return Err("host counts must be sorted ascending".into());
    }
    let mut rows = Vec::with_capacity(host_counts.len());
    for &n in host_counts {
        let started = Instant::now();
        let (built, bytes, method) = memory::measure(|| {
            let count = u32::try_from(n).map_err(|_| format!("{n} hosts exceeds the supported maximum"))?;
            build_world(&canonical_datacenter(count))
        });
        let build_seconds = started.elapsed().as_secs_f64();
        let error = built.as_ref().err().cloned();
        drop(built);
        rows.push(ProfileRow {
            host_count: n,
            build_seconds,
            peak_resident_bytes: bytes,
            method: method.to_string(),
            error,
        });
    }
    Ok(rows)
}
