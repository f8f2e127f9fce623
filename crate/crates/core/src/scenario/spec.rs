//! Declarative scenario description, loading and validation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::market::CostRates;
use crate::model::VmSpec;
use crate::scheduling::SchedulingPolicy;

fn yes() -> bool {
    true
}

fn default_sensor_period() -> f64 {
    10.0
}

fn default_policy() -> SchedulingPolicy {
    SchedulingPolicy::SpaceShared
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub trace: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Keep per-cloudlet constant-rate intervals.
    #[serde(default)]
    pub record_rates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanSpec {
    pub capacity_mb: u64,
    /// Mbit/s.
    pub bandwidth: f64,
    #[serde(default)]
    pub latency: f64,
}

/// Extra hosts appended after the homogeneous block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostGroupSpec {
    pub count: u32,
    /// MIPS of each core.
    pub core_mips: Vec<f64>,
    pub ram_mb: u64,
    pub storage_mb: u64,
    #[serde(default)]
    pub bw: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatacenterSpec {
    pub name: String,
    pub host_count: u32,
    pub cores_per_host: u32,
    pub mips_per_core: f64,
    pub ram_mb: u64,
    pub storage_mb: u64,
    #[serde(default)]
    pub bw: u64,
    #[serde(default = "default_policy")]
    pub vm_scheduler: SchedulingPolicy,
    #[serde(default)]
    pub costs: CostRates,
    #[serde(default)]
    pub queueing: bool,
    /// Hosts, counted from index 0, fully taken by load outside the run.
    #[serde(default)]
    pub initial_busy_hosts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub host_groups: Vec<HostGroupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub san: Option<SanSpec>,
}

impl DatacenterSpec {
    pub fn total_hosts(&self) -> u64 {
        self.host_count as u64 + self.host_groups.iter().map(|g| g.count as u64).sum::<u64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmGroupSpec {
    pub count: u32,
    pub cores: u32,
    pub mips: f64,
    pub ram_mb: u64,
    pub storage_mb: u64,
    #[serde(default = "default_policy")]
    pub cloudlet_scheduler: SchedulingPolicy,
}

impl VmGroupSpec {
    pub fn spec(&self) -> VmSpec {
        VmSpec {
            cores: self.cores,
            mips: self.mips,
            ram_mb: self.ram_mb,
            storage_mb: self.storage_mb,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binding {
    #[default]
    RoundRobin,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub size: u32,
    /// Seconds after the start of the run.
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudletGroupSpec {
    pub count: u32,
    pub length_mi: f64,
    #[serde(default)]
    pub input_bytes: u64,
    #[serde(default)]
    pub output_bytes: u64,
    #[serde(default)]
    pub binding: Binding,
    /// VM index for each cloudlet when binding is explicit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bindings: Vec<u32>,
    /// Empty means everything at time 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<BatchSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerSpec {
    pub name: String,
    /// Data center to use when the information service offers it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datacenter: Option<String>,
    #[serde(default = "yes")]
    pub confirm_vm_create: bool,
    #[serde(default)]
    pub confirm_cloudlet_submit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_quota: Option<u32>,
    pub vms: VmGroupSpec,
    pub cloudlets: CloudletGroupSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationSpec {
    pub at: f64,
    pub broker: String,
    pub vm_index: u32,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceVmSpec {
    pub cores: u32,
    pub mips: f64,
    pub ram_mb: u64,
    pub storage_mb: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    #[serde(default)]
    pub enabled: bool,
    /// Empty means every data center.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
    /// Square matrix of one-way seconds, in member order. Empty means zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub link_latency: Vec<Vec<f64>>,
    #[serde(default = "default_sensor_period")]
    pub sensor_period: f64,
    #[serde(default)]
    pub migration_delay: f64,
    /// Route placement through the exchange rather than peer reports.
    #[serde(default = "yes")]
    pub use_exchange: bool,
    /// Spec counted in free-slot estimates; defaults to the first broker's VM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_vm: Option<ReferenceVmSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub migrations: Vec<MigrationSpec>,
}

impl Default for FederationSpec {
    fn default() -> Self {
        FederationSpec {
            enabled: false,
            members: Vec::new(),
            link_latency: Vec::new(),
            sensor_period: default_sensor_period(),
            migration_delay: 0.0,
            use_exchange: true,
            reference_vm: None,
            migrations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub run: RunSpec,
    pub datacenters: Vec<DatacenterSpec>,
    #[serde(default)]
    pub brokers: Vec<BrokerSpec>,
    #[serde(default)]
    pub federation: FederationSpec,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ScenarioSpec {
    pub fn from_toml(src: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Index of the data center with this name.
    pub fn dc_index(&self, name: &str) -> Option<usize> {
        self.datacenters.iter().position(|d| d.name == name)
    }

    /// Indices of federated data centers, in member order.
    pub fn member_indices(&self) -> Vec<usize> {
        if !self.federation.enabled {
            return Vec::new();
        }
        if self.federation.members.is_empty() {
            return (0..self.datacenters.len()).collect();
        }
        self.federation.members.iter().filter_map(|m| self.dc_index(m)).collect()
    }

    pub fn reference_vm(&self) -> VmSpec {
        if let Some(r) = &self.federation.reference_vm {
            return VmSpec {
                cores: r.cores,
                mips: r.mips,
                ram_mb: r.ram_mb,
                storage_mb: r.storage_mb,
            };
        }
        match self.brokers.iter().find(|b| b.vms.count > 0) {
            Some(b) => b.vms.spec(),
            None => VmSpec {
                cores: 1,
                mips: f64::MIN_POSITIVE,
                ram_mb: 0,
                storage_mb: 0,
            },
        }
    }

    /// Checks every semantic rule; the error names the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |path: String, msg: &str| Err(ScenarioError::invalid(path, msg));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;

        if self.datacenters.is_empty() {
            return bad("datacenters".into(), "at least one data center is required");
        }
        let mut names = BTreeSet::new();
        for (i, d) in self.datacenters.iter().enumerate() {
            let p = format!("datacenters[{i}]");
            if d.name.is_empty() || !names.insert(d.name.as_str()) {
                return bad(format!("{p}.name"), "names must be non-empty and unique");
            }
            if d.host_count > 0 && (d.cores_per_host == 0 || !positive(d.mips_per_core)) {
                return bad(format!("{p}.mips_per_core"), "hosts need at least one core with positive MIPS");
            }
            if d.initial_busy_hosts as u64 > d.total_hosts() {
                return bad(format!("{p}.initial_busy_hosts"), "exceeds the number of hosts");
            }
            if !d.costs.is_valid() {
                return bad(format!("{p}.costs"), "cost rates must be finite and non-negative");
            }
            for (g, h) in d.host_groups.iter().enumerate() {
                if h.core_mips.is_empty() || !h.core_mips.iter().all(|&m| positive(m)) {
                    return bad(format!("{p}.host_groups[{g}].core_mips"), "needs at least one core, all with positive MIPS");
                }
            }
            if let Some(san) = &d.san {
                if !positive(san.bandwidth) || !non_negative(san.latency) {
                    return bad(format!("{p}.san"), "bandwidth must be positive and latency non-negative");
                }
            }
        }

        let mut broker_names = BTreeSet::new();
        for (i, b) in self.brokers.iter().enumerate() {
            let p = format!("brokers[{i}]");
            if b.name.is_empty() || !broker_names.insert(b.name.as_str()) || names.contains(b.name.as_str()) {
                return bad(format!("{p}.name"), "names must be non-empty and unique across brokers and data centers");
            }
            if let Some(dc) = &b.datacenter {
                if self.dc_index(dc).is_none() {
                    return bad(format!("{p}.datacenter"), "unknown data center");
                }
            }
            let v = &b.vms;
            if v.count > 0 && (v.cores == 0 || !positive(v.mips)) {
                return bad(format!("{p}.vms"), "VMs need at least one core with positive MIPS");
            }
            let c = &b.cloudlets;
            if c.count > 0 && v.count == 0 {
                return bad(format!("{p}.cloudlets.count"), "cloudlets need at least one VM to bind to");
            }
            if !non_negative(c.length_mi) {
                return bad(format!("{p}.cloudlets.length_mi"), "must be finite and non-negative");
            }
            match c.binding {
                Binding::RoundRobin if !c.bindings.is_empty() => {
                    return bad(format!("{p}.cloudlets.bindings"), "only allowed with explicit binding");
                }
                Binding::Explicit => {
                    if c.bindings.len() != c.count as usize {
                        return bad(format!("{p}.cloudlets.bindings"), "needs one VM index per cloudlet");
                    }
                    if let Some(k) = c.bindings.iter().position(|&vm| vm >= v.count) {
                        return bad(format!("{p}.cloudlets.bindings[{k}]"), "refers to an undeclared VM");
                    }
                }
                _ => {}
            }
            if !c.schedule.is_empty() {
                let total: u64 = c.schedule.iter().map(|s| s.size as u64).sum();
                if total != c.count as u64 {
                    return bad(format!("{p}.cloudlets.schedule"), "batch sizes must add up to the cloudlet count");
                }
                if let Some(k) = c.schedule.iter().position(|s| !non_negative(s.offset)) {
                    return bad(format!("{p}.cloudlets.schedule[{k}].offset"), "must be finite and non-negative");
                }
            }
        }

        let f = &self.federation;
        if !positive(f.sensor_period) {
            return bad("federation.sensor_period".into(), "must be positive");
        }
        if !non_negative(f.migration_delay) {
            return bad("federation.migration_delay".into(), "must be finite and non-negative");
        }
        let mut members = BTreeSet::new();
        for (i, m) in f.members.iter().enumerate() {
            if self.dc_index(m).is_none() || !members.insert(m.as_str()) {
                return bad(format!("federation.members[{i}]"), "unknown or repeated data center");
            }
        }
        let n = if f.members.is_empty() { self.datacenters.len() } else { f.members.len() };
        if !f.link_latency.is_empty() {
            if f.link_latency.len() != n || f.link_latency.iter().any(|row| row.len() != n) {
                return bad("federation.link_latency".into(), "must be a square matrix over the members");
            }
            for (r, row) in f.link_latency.iter().enumerate() {
                if let Some(c) = row.iter().position(|&x| !non_negative(x)) {
                    return bad(format!("federation.link_latency[{r}][{c}]"), "latencies must be non-negative");
                }
            }
        }
        if let Some(r) = &f.reference_vm {
            if r.cores == 0 || !positive(r.mips) {
                return bad("federation.reference_vm".into(), "needs at least one core with positive MIPS");
            }
        }
        for (i, m) in f.migrations.iter().enumerate() {
            let p = format!("federation.migrations[{i}]");
            if !f.enabled {
                return bad(p, "migrations need federation enabled");
            }
            if !non_negative(m.at) {
                return bad(format!("{p}.at"), "must be finite and non-negative");
            }
            let Some(b) = self.brokers.iter().find(|b| b.name == m.broker) else {
                return bad(format!("{p}.broker"), "unknown broker");
            };
            if m.vm_index >= b.vms.count {
                return bad(format!("{p}.vm_index"), "refers to an undeclared VM");
            }
            match self.dc_index(&m.to) {
                Some(d) if self.member_indices().contains(&d) => {}
                _ => return bad(format!("{p}.to"), "must name a federation member"),
            }
        }
        Ok(())
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioSpec::from_toml(&src)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[datacenters]]
name = "dc0"
host_count = 2
cores_per_host = 1
mips_per_core = 1000.0
ram_mb = 1024
storage_mb = 4096

[[brokers]]
name = "user"
[brokers.vms]
count = 2
cores = 1
mips = 1000.0
ram_mb = 512
storage_mb = 1024
[brokers.cloudlets]
count = 4
length_mi = 1000.0
"#;

    #[test]
    fn defaults_are_filled() {
        let s = ScenarioSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(s.datacenters[0].vm_scheduler, SchedulingPolicy::SpaceShared);
        assert!(!s.datacenters[0].queueing);
        assert!(s.brokers[0].confirm_vm_create);
        assert_eq!(s.federation.sensor_period, 10.0);
        assert_eq!(s.run.seed, 0);
    }

    #[test]
    fn round_trip_through_text() {
        let s = ScenarioSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(ScenarioSpec::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn empty_datacenter_list_is_rejected() {
        let err = ScenarioSpec::from_toml("datacenters = []").unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref path, .. } if path == "datacenters"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ScenarioSpec::from_toml("[[datacenters]]\nname = \"a\"\nhost_count = \"x\"\n").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn explicit_binding_to_unknown_vm_names_the_path() {
        let src = MINIMAL.replace("length_mi = 1000.0", "length_mi = 1000.0\nbinding = \"explicit\"\nbindings = [0, 1, 5, 0]");
        let err = ScenarioSpec::from_toml(&src).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref path, .. } if path == "brokers[0].cloudlets.bindings[2]"), "{err}");
    }

    #[test]
    fn schedule_must_cover_all_cloudlets() {
        let src = MINIMAL.replace("length_mi = 1000.0", "length_mi = 1000.0\nschedule = [{ size = 3, offset = 0.0 }]");
        let err = ScenarioSpec::from_toml(&src).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref path, .. } if path == "brokers[0].cloudlets.schedule"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let src = MINIMAL.replace("host_count = 2", "host_count = 2\nhosts = 3");
        assert!(matches!(ScenarioSpec::from_toml(&src), Err(ScenarioError::Parse { .. })));
    }
}
