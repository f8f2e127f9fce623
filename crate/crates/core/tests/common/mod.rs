//! Scenario text builders shared by the integration tests.
#![allow(dead_code)]

use dcsim::scenario::ScenarioSpec;

pub mod oracle;

pub struct Dc {
    pub name: String,
    pub policy: &'static str,
    pub queueing: bool,
    pub busy: u32,
    /// (count, core mips list, ram_mb)
    pub groups: Vec<(u32, Vec<f64>, u64)>,
}

impl Dc {
    pub fn new(name: &str, policy: &'static str) -> Self {
        Dc {
            name: name.into(),
            policy,
            queueing: false,
            busy: 0,
            groups: Vec::new(),
        }
    }

    pub fn hosts(mut self, count: u32, core_mips: &[f64], ram_mb: u64) -> Self {
        self.groups.push((count, core_mips.to_vec(), ram_mb));
        self
    }

    pub fn queueing(mut self, on: bool) -> Self {
        self.queueing = on;
        self
    }

    pub fn busy(mut self, n: u32) -> Self {
        self.busy = n;
        self
    }

    pub fn toml(&self) -> String {
        let mut s = format!(
            "[[datacenters]]\nname = \"{}\"\nhost_count = 0\ncores_per_host = 1\nmips_per_core = 1000.0\nram_mb = 1024\nstorage_mb = 1048576\nvm_scheduler = \"{}\"\nqueueing = {}\ninitial_busy_hosts = {}\n\n[datacenters.costs]\ncost_per_sec = 0.01\ncost_per_mem = 0.05\ncost_per_storage = 0.001\ncost_per_bw = 0.000001\n\n",
            self.name, self.policy, self.queueing, self.busy
        );
        for (count, mips, ram) in &self.groups {
            s += &format!(
                "[[datacenters.host_groups]]\ncount = {count}\ncore_mips = {mips:?}\nram_mb = {ram}\nstorage_mb = 1048576\n\n"
            );
        }
        s
    }
}

pub struct User {
    pub name: String,
    pub dc: Option<String>,
    pub vms: u32,
    pub cores: u32,
    pub mips: f64,
    pub ram_mb: u64,
    pub policy: &'static str,
    pub length_mi: f64,
    pub bindings: Vec<u32>,
    pub io_bytes: u64,
    /// (size, offset)
    pub schedule: Vec<(u32, f64)>,
}

impl User {
    pub fn new(name: &str, vms: u32, cores: u32, mips: f64, ram_mb: u64, policy: &'static str) -> Self {
        User {
            name: name.into(),
            dc: None,
            vms,
            cores,
            mips,
            ram_mb,
            policy,
            length_mi: 1000.0,
            bindings: Vec::new(),
            io_bytes: 0,
            schedule: Vec::new(),
        }
    }

    pub fn at(mut self, dc: &str) -> Self {
        self.dc = Some(dc.into());
        self
    }

    pub fn tasks(mut self, length_mi: f64, bindings: &[u32]) -> Self {
        self.length_mi = length_mi;
        self.bindings = bindings.to_vec();
        self
    }

    pub fn io(mut self, bytes: u64) -> Self {
        self.io_bytes = bytes;
        self
    }

    pub fn schedule(mut self, batches: &[(u32, f64)]) -> Self {
        self.schedule = batches.to_vec();
        self
    }

    pub fn toml(&self) -> String {
        let mut s = format!("[[brokers]]\nname = \"{}\"\n", self.name);
        if let Some(dc) = &self.dc {
            s += &format!("datacenter = \"{dc}\"\n");
        }
        s += &format!(
            "\n[brokers.vms]\ncount = {}\ncores = {}\nmips = {:?}\nram_mb = {}\nstorage_mb = 1024\ncloudlet_scheduler = \"{}\"\n\n",
            self.vms, self.cores, self.mips, self.ram_mb, self.policy
        );
        s += &format!(
            "[brokers.cloudlets]\ncount = {}\nlength_mi = {:?}\ninput_bytes = {}\noutput_bytes = {}\nbinding = \"explicit\"\nbindings = {:?}\n\n",
            self.bindings.len(),
            self.length_mi,
            self.io_bytes,
            self.io_bytes,
            self.bindings
        );
        for (size, offset) in &self.schedule {
            s += &format!("[[brokers.cloudlets.schedule]]\nsize = {size}\noffset = {offset:?}\n\n");
        }
        s
    }
}

pub struct Federation {
    pub delay: f64,
    pub latency: f64,
    pub use_exchange: bool,
    /// (at, broker, vm_index, to)
    pub migrations: Vec<(f64, String, u32, String)>,
}

pub fn scenario(dcs: &[Dc], users: &[User], fed: Option<&Federation>) -> ScenarioSpec {
    let mut s = String::from("[run]\nseed = 7\nrecord_rates = true\n\n");
    for d in dcs {
        s += &d.toml();
    }
    for u in users {
        s += &u.toml();
    }
    if let Some(f) = fed {
        let n = dcs.len();
        let row = vec![f.latency; n];
        let matrix: Vec<Vec<f64>> = (0..n)
            .map(|i| row.iter().enumerate().map(|(j, &l)| if i == j { 0.0 } else { l }).collect())
            .collect();
        s += &format!(
            "[federation]\nenabled = true\nlink_latency = {matrix:?}\nsensor_period = 5.0\nmigration_delay = {:?}\nuse_exchange = {}\n\n",
            f.delay, f.use_exchange
        );
        for (at, broker, vm, to) in &f.migrations {
            s += &format!("[[federation.migrations]]\nat = {at:?}\nbroker = \"{broker}\"\nvm_index = {vm}\nto = \"{to}\"\n\n");
        }
    }
    ScenarioSpec::from_toml(&s).unwrap_or_else(|e| panic!("{e}\n{s}"))
}

pub fn load_fixture(name: &str) -> ScenarioSpec {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    dcsim::scenario::load_scenario(&path).expect("fixture loads")
}
