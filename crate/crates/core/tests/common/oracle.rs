//! Fixed-step reference for cloudlet finish times on small random scenarios.

use proptest::prelude::*;

use super::{scenario, Dc, User};

pub const DT: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct HostGen {
    cores: usize,
    mips: f64,
    ram: u64,
}

#[derive(Clone, Debug)]
pub struct UserGen {
    vms: u32,
    cores: u32,
    mips: f64,
    ram: u64,
    space: bool,
    length: f64,
    bindings: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Case {
    pub space_hosts: bool,
    pub hosts: Vec<HostGen>,
    pub users: Vec<UserGen>,
}

fn host() -> impl Strategy<Value = HostGen> {
    (1usize..=2, prop::sample::select(vec![500.0, 1000.0]), prop::sample::select(vec![1024u64, 2048]))
        .prop_map(|(cores, mips, ram)| HostGen { cores, mips, ram })
}

fn user(max_vms: u32) -> impl Strategy<Value = UserGen> {
    (
        1..=max_vms,
        1u32..=2,
        prop::sample::select(vec![250.0, 500.0, 1000.0]),
        prop::sample::select(vec![512u64, 1024]),
        any::<bool>(),
        50u32..3000,
    )
        .prop_flat_map(|(vms, cores, mips, ram, space, len)| {
            // Every VM gets at least one task so none is torn down at t=0.
            let extra = prop::collection::vec(0..vms, 0..=2);
            extra.prop_map(move |extra| {
                let mut bindings: Vec<u32> = (0..vms).collect();
                bindings.extend(extra);
                UserGen {
                    vms,
                    cores,
                    mips,
                    ram,
                    space,
                    length: len as f64,
                    bindings,
                }
            })
        })
}

pub fn cases() -> impl Strategy<Value = Case> {
    (any::<bool>(), prop::collection::vec(host(), 1..=3), user(2), prop::option::of(user(2))).prop_map(
        |(space_hosts, hosts, a, b)| {
            let mut users = vec![a];
            users.extend(b);
            Case { space_hosts, hosts, users }
        },
    )
}

struct OVm {
    cores: usize,
    mips: f64,
    ram: u64,
    space: bool,
    host: Option<usize>,
    /// Core indices held on a space-shared host.
    held: Vec<usize>,
    alive: bool,
}

struct OTask {
    vm: usize,
    length: f64,
    remaining: f64,
    finish: Option<f64>,
}

/// Fixed-step reference: every `DT` recompute all rates from scratch and
/// integrate. Nothing is predicted ahead of the current step.
pub fn oracle(case: &Case) -> Vec<Option<f64>> {
    let mut vms = Vec::new();
    let mut tasks = Vec::new();
    for u in &case.users {
        let base = vms.len();
        for _ in 0..u.vms {
            vms.push(OVm {
                cores: u.cores as usize,
                mips: u.mips,
                ram: u.ram,
                space: u.space,
                host: None,
                held: Vec::new(),
                alive: false,
            });
        }
        for &b in &u.bindings {
            tasks.push(OTask {
                vm: base + b as usize,
                length: u.length,
                remaining: u.length,
                finish: None,
            });
        }
    }
    // First fit in request order.
    let mut ram_free: Vec<u64> = case.hosts.iter().map(|h| h.ram).collect();
    let mut core_free: Vec<Vec<bool>> = case.hosts.iter().map(|h| vec![true; h.cores]).collect();
    for v in vms.iter_mut() {
        for (h, spec) in case.hosts.iter().enumerate() {
            if spec.mips < v.mips || v.cores > spec.cores || ram_free[h] < v.ram {
                continue;
            }
            if case.space_hosts {
                let free: Vec<usize> = (0..spec.cores).filter(|&c| core_free[h][c]).take(v.cores).collect();
                if free.len() < v.cores {
                    continue;
                }
                for &c in &free {
                    core_free[h][c] = false;
                }
                v.held = free;
            }
            ram_free[h] -= v.ram;
            v.host = Some(h);
            v.alive = true;
            break;
        }
    }

    let mut t = 0.0;
    let mut left = DT;
    loop {
        let pending: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i].finish.is_none() && vms[tasks[i].vm].alive).collect();
        if pending.is_empty() {
            break;
        }
        let rate = rates(case, &vms, &tasks, &pending);
        // A completion inside the step ends this sub-step; the rest of the
        // step runs with rates recomputed for the new population.
        let sub = pending
            .iter()
            .filter(|&&i| rate[i] > 0.0)
            .map(|&i| tasks[i].remaining / rate[i])
            .fold(left, f64::min);
        for &i in &pending {
            tasks[i].remaining -= rate[i] * sub;
            if rate[i] > 0.0 && tasks[i].remaining <= 1e-9 * tasks[i].length.max(1.0) {
                tasks[i].finish = Some(t + sub);
            }
        }
        t += sub;
        left -= sub;
        if left <= 1e-12 {
            left = DT;
        }
        for (idx, vm) in vms.iter_mut().enumerate() {
            if vm.alive && tasks.iter().filter(|k| k.vm == idx).all(|k| k.finish.is_some()) {
                vm.alive = false;
                if let Some(h) = vm.host {
                    for &c in &vm.held {
                        core_free[h][c] = true;
                    }
                }
            }
        }
        assert!(t < 1e5, "oracle did not converge");
    }
    tasks.iter().map(|k| k.finish).collect()
}

/// Rate of every pending task, derived from scratch from the current population.
fn rates(case: &Case, vms: &[OVm], tasks: &[OTask], pending: &[usize]) -> Vec<f64> {
    let mut vcore = vec![0.0; vms.len()];
    for (h, spec) in case.hosts.iter().enumerate() {
        let here: Vec<usize> = (0..vms.len()).filter(|&v| vms[v].alive && vms[v].host == Some(h)).collect();
        if case.space_hosts {
            for &v in &here {
                vcore[v] = spec.mips;
            }
        } else {
            let want: f64 = here.iter().map(|&v| vms[v].cores as f64 * vms[v].mips).sum();
            let f = (spec.mips * spec.cores as f64 / want).min(1.0);
            for &v in &here {
                vcore[v] = vms[v].mips * f;
            }
        }
    }
    let mut rate = vec![0.0; tasks.len()];
    for (v, vm) in vms.iter().enumerate() {
        let mine: Vec<usize> = pending.iter().copied().filter(|&i| tasks[i].vm == v).collect();
        if vm.space {
            for &i in mine.iter().take(vm.cores) {
                rate[i] = vcore[v];
            }
        } else {
            let n = mine.len() as f64;
            for &i in &mine {
                rate[i] = (vcore[v] * vm.cores as f64 / n).min(vcore[v]);
            }
        }
    }
    rate
}

pub fn to_spec(case: &Case) -> dcsim::scenario::ScenarioSpec {
    let policy = if case.space_hosts { "space-shared" } else { "time-shared" };
    let mut dc = Dc::new("dc", policy);
    for h in &case.hosts {
        dc = dc.hosts(1, &vec![h.mips; h.cores], h.ram);
    }
    let users: Vec<User> = case
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let p = if u.space { "space-shared" } else { "time-shared" };
            User::new(&format!("u{i}"), u.vms, u.cores, u.mips, u.ram, p).tasks(u.length, &u.bindings)
        })
        .collect();
    scenario(&[dc], &users, None)
}
