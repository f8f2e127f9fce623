//! Two-level CPU allocation.
//!
//! At the host level a VM scheduler decides how much of each physical core a
//! VM receives (its [`MipsShare`]). At the VM level a [`CloudletScheduler`]
//! hands that share to the cloudlets bound to the VM. Both levels come in a
//! space-shared flavor (exclusive cores, FIFO wait queue) and a time-shared
//! flavor (proportional division, no queue).
//!
//! Progress is integrated analytically: between two updates every running
//! cloudlet advances at a constant rate, and the next completion instant is
//! `now + remaining / rate`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::model::{Cloudlet, CloudletStatus, RateSegment};

/// Remaining work, in MI, at or below which a cloudlet counts as finished.
pub const COMPLETION_EPSILON_MI: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulingPolicy {
    SpaceShared,
    TimeShared,
}

/// Effective MIPS of each virtual core of a VM.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MipsShare(pub Vec<f64>);

impl MipsShare {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_core(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn cores(&self) -> usize {
        self.0.len()
    }
}

/// CPU part of a VM request.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VmDemand {
    pub cores: u32,
    pub mips: f64,
}

/// Why a space-shared host cannot give a VM its cores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoreShortage {
    /// The host does not have enough suitable cores even when empty.
    Never,
    /// Suitable cores exist but are held by earlier VMs.
    Busy,
}

/// FCFS core assignment for a space-shared host. Each VM receives the lowest
/// indexed free cores whose capacity covers its per-core MIPS, at the full
/// capacity of those cores.
pub fn space_shared_shares(core_mips: &[f64], demands: &[VmDemand]) -> Vec<Result<MipsShare, CoreShortage>> {
    let mut taken = vec![false; core_mips.len()];
    demands
        .iter()
        .map(|d| {
            let suitable = core_mips.iter().filter(|&&c| c >= d.mips).count();
            if (d.cores as usize) > suitable {
                return Err(CoreShortage::Never);
            }
            let picked: Vec<usize> = (0..core_mips.len())
                .filter(|&i| !taken[i] && core_mips[i] >= d.mips)
                .take(d.cores as usize)
                .collect();
            if picked.len() < d.cores as usize {
                return Err(CoreShortage::Busy);
            }
            for &i in &picked {
                taken[i] = true;
            }
            Ok(MipsShare(picked.iter().map(|&i| core_mips[i]).collect()))
        })
        .collect()
}

/// Proportional sharing for a time-shared host. Requests are granted in full
/// while they fit; under oversubscription every virtual core is scaled by the
/// same factor `capacity / requested`.
pub fn time_shared_shares(core_mips: &[f64], demands: &[VmDemand]) -> Vec<MipsShare> {
    let capacity: f64 = core_mips.iter().sum();
    let requested: f64 = demands.iter().map(|d| d.cores as f64 * d.mips).sum();
    let factor = if requested > capacity { capacity / requested } else { 1.0 };
    demands
        .iter()
        .map(|d| MipsShare(vec![d.mips * factor; d.cores as usize]))
        .collect()
}

/// Rates for `n` cloudlets in FIFO order sharing one VM.
///
/// Space-shared: the first `k` cloudlets each own one virtual core, the rest
/// get nothing. Time-shared: everyone gets `total / n`, capped at the fastest
/// single virtual core since a sequential task cannot use two cores.
pub fn cloudlet_shares(policy: SchedulingPolicy, share: &MipsShare, n: usize) -> Vec<f64> {
    match policy {
        SchedulingPolicy::SpaceShared => (0..n).map(|i| share.0.get(i).copied().unwrap_or(0.0)).collect(),
        SchedulingPolicy::TimeShared => {
            if n == 0 {
                return Vec::new();
            }
            let each = (share.total() / n as f64).min(share.max_core());
            vec![each; n]
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchedulingError {
    #[error("update at {now} precedes last update at {last}")]
    TimeWentBackwards { now: f64, last: f64 },
}

#[derive(Clone, Debug)]
struct Active {
    cloudlet: Cloudlet,
    rate: f64,
    vcore: Option<usize>,
}

/// Result of advancing a VM's cloudlets to a new instant.
#[derive(Debug, Default)]
pub struct UpdateOutcome {
    /// Ordered by finish time, then cloudlet id.
    pub finished: Vec<Cloudlet>,
    pub next_completion: Option<SimTime>,
}

/// VM-level scheduler for the cloudlets bound to one VM.
#[derive(Clone, Debug)]
pub struct CloudletScheduler {
    policy: SchedulingPolicy,
    running: Vec<Active>,
    waiting: VecDeque<Cloudlet>,
    last_update: SimTime,
    record_rates: bool,
}

impl CloudletScheduler {
    pub fn new(policy: SchedulingPolicy, now: SimTime) -> Self {
        CloudletScheduler {
            policy,
            running: Vec::new(),
            waiting: VecDeque::new(),
            last_update: now,
            record_rates: false,
        }
    }

    /// Keep a per-cloudlet log of constant-rate intervals.
    pub fn with_rate_log(mut self, on: bool) -> Self {
        self.record_rates = on;
        self
    }

    pub fn policy(&self) -> SchedulingPolicy {
        self.policy
    }

    pub fn last_update(&self) -> SimTime {
        self.last_update
    }

    pub fn running_count(&self) -> usize {
        self.running.len()
    }

    pub fn waiting_count(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.running.is_empty() && self.waiting.is_empty()
    }

    /// Current execution rate of each running cloudlet.
    pub fn rates(&self) -> impl Iterator<Item = (&Cloudlet, f64)> + '_ {
        self.running.iter().map(|a| (&a.cloudlet, a.rate))
    }

    pub fn cloudlets(&self) -> impl Iterator<Item = &Cloudlet> + '_ {
        self.running.iter().map(|a| &a.cloudlet).chain(self.waiting.iter())
    }

    /// Queues a cloudlet. It starts on the next [`update`](Self::update).
    pub fn submit(&mut self, mut cloudlet: Cloudlet) {
        cloudlet.status = CloudletStatus::Queued;
        if self.record_rates && cloudlet.rate_log.is_none() {
            cloudlet.rate_log = Some(Vec::new());
        }
        self.waiting.push_back(cloudlet);
    }

    /// Advances every running cloudlet to `now` at its current rate, retires
    /// the ones that completed, promotes waiting work and assigns new rates
    /// from `share`.
    pub fn update(&mut self, now: SimTime, share: &MipsShare) -> Result<UpdateOutcome, SchedulingError> {
        let last = self.last_update;
        if now < last {
            return Err(SchedulingError::TimeWentBackwards {
                now: now.secs(),
                last: last.secs(),
            });
        }
        let dt = now.secs() - last.secs();
        let mut finished = Vec::new();

        let mut i = 0;
        while i < self.running.len() {
            let a = &mut self.running[i];
            let before = a.cloudlet.remaining_mi;
            let mut crossing = None;
            if dt > 0.0 && a.rate > 0.0 {
                a.cloudlet.remaining_mi = (before - a.rate * dt).max(0.0);
                if is_done(&a.cloudlet, a.rate, now) {
                    crossing = Some((last.secs() + before / a.rate).min(now.secs()));
                }
            } else if is_done(&a.cloudlet, a.rate, now) {
                crossing = Some(last.secs());
            }
            let end = crossing.unwrap_or(now.secs());
            let ran = end - last.secs();
            if ran > 0.0 && a.rate > 0.0 {
                a.cloudlet.cpu_time += ran;
                if let Some(log) = a.cloudlet.rate_log.as_mut() {
                    push_segment(log, last.secs(), end, a.rate);
                }
            }
            if let Some(t) = crossing {
                let mut done = self.running.swap_remove(i).cloudlet;
                finish(&mut done, t);
                finished.push(done);
            } else {
                i += 1;
            }
        }
        self.last_update = now;

        loop {
            self.promote(now, share.cores());
            self.assign_rates(share);
            // Zero-length work completes the instant it starts.
            let before = finished.len();
            let mut j = 0;
            while j < self.running.len() {
                if is_done(&self.running[j].cloudlet, self.running[j].rate, now) {
                    let mut done = self.running.remove(j).cloudlet;
                    finish(&mut done, now.secs());
                    finished.push(done);
                } else {
                    j += 1;
                }
            }
            if finished.len() == before {
                break;
            }
        }

        finished.sort_by(|a, b| {
            let ta = a.finish_time.unwrap_or(SimTime::ZERO);
            let tb = b.finish_time.unwrap_or(SimTime::ZERO);
            ta.cmp(&tb).then(a.id.cmp(&b.id))
        });
        // Keep running work in a stable order so later ties resolve by id.
        self.running.sort_by_key(|a| a.cloudlet.id);
        Ok(UpdateOutcome {
            finished,
            next_completion: self.next_completion(),
        })
    }

    /// Earliest predicted completion among running cloudlets.
    pub fn next_completion(&self) -> Option<SimTime> {
        self.running
            .iter()
            .filter(|a| a.rate > 0.0)
            .map(|a| self.last_update.secs() + a.cloudlet.remaining_mi / a.rate)
            .min_by(f64::total_cmp)
            .and_then(|t| SimTime::new(t).ok())
    }

    /// Removes every cloudlet, running or waiting, leaving them paused with
    /// their remaining work intact. Call [`update`](Self::update) first so
    /// that progress up to the current instant is accounted for.
    pub fn drain(&mut self) -> Vec<Cloudlet> {
        let mut out: Vec<Cloudlet> = self.running.drain(..).map(|a| a.cloudlet).collect();
        out.sort_by_key(|c| c.id);
        out.extend(self.waiting.drain(..));
        for c in &mut out {
            c.status = CloudletStatus::Paused;
        }
        out
    }

    fn promote(&mut self, now: SimTime, vcores: usize) {
        loop {
            let vcore = match self.policy {
                SchedulingPolicy::TimeShared => None,
                SchedulingPolicy::SpaceShared => match self.free_vcore(vcores) {
                    Some(v) => Some(v),
                    None => break,
                },
            };
            let Some(mut c) = self.waiting.pop_front() else { break };
            c.status = CloudletStatus::Running;
            if c.start_time.is_none() {
                c.start_time = Some(now);
            }
            self.running.push(Active {
                cloudlet: c,
                rate: 0.0,
                vcore,
            });
        }
    }

    fn free_vcore(&self, vcores: usize) -> Option<usize> {
        (0..vcores).find(|v| !self.running.iter().any(|a| a.vcore == Some(*v)))
    }

    fn assign_rates(&mut self, share: &MipsShare) {
        match self.policy {
            SchedulingPolicy::SpaceShared => {
                for a in &mut self.running {
                    a.rate = a.vcore.and_then(|v| share.0.get(v).copied()).unwrap_or(0.0);
                }
            }
            SchedulingPolicy::TimeShared => {
                let rates = cloudlet_shares(self.policy, share, self.running.len());
                for (a, r) in self.running.iter_mut().zip(rates) {
                    a.rate = r;
                }
            }
        }
    }
}

fn is_done(c: &Cloudlet, rate: f64, now: SimTime) -> bool {
    let remaining = c.remaining_mi;
    // Rounding in `remaining - rate * dt` leaves residues proportional to the
    // length; residues too small to move the clock count as done as well.
    remaining <= COMPLETION_EPSILON_MI.max(c.length_mi * 4.0 * f64::EPSILON)
        || (rate > 0.0 && now.secs() + remaining / rate <= now.secs())
}

fn finish(c: &mut Cloudlet, at: f64) {
    c.remaining_mi = 0.0;
    c.status = CloudletStatus::Finished;
    let at = SimTime::new(at).expect("finish instant is a valid time");
    if c.start_time.is_none() {
        c.start_time = Some(at);
    }
    c.finish_time = Some(at);
}

fn push_segment(log: &mut Vec<RateSegment>, start: f64, end: f64, mips: f64) {
    if let Some(last) = log.last_mut() {
        if last.end == start && last.mips == mips {
            last.end = end;
            return;
        }
    }
    log.push(RateSegment { start, end, mips });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::EntityId;
    use crate::model::{CloudletId, VmId};

    fn t(s: f64) -> SimTime {
        SimTime::new(s).unwrap()
    }

    fn cl(id: u32, len: f64) -> Cloudlet {
        Cloudlet::new(CloudletId(id), EntityId(0), VmId(0), len, 0, 0)
    }

    fn d(cores: u32, mips: f64) -> VmDemand {
        VmDemand { cores, mips }
    }

    #[test]
    fn space_shared_grants_whole_cores_in_arrival_order() {
        let got = space_shared_shares(&[500.0; 4], &[d(1, 500.0), d(2, 500.0), d(1, 500.0), d(1, 500.0)]);
        assert_eq!(got[0], Ok(MipsShare(vec![500.0])));
        assert_eq!(got[1], Ok(MipsShare(vec![500.0, 500.0])));
        assert_eq!(got[2], Ok(MipsShare(vec![500.0])));
        assert_eq!(got[3], Err(CoreShortage::Busy));
        let got = space_shared_shares(&[1000.0; 2], &[d(2, 1000.0), d(2, 1000.0), d(3, 1000.0)]);
        assert_eq!(got[0], Ok(MipsShare(vec![1000.0, 1000.0])));
        assert_eq!(got[1], Err(CoreShortage::Busy));
        assert_eq!(got[2], Err(CoreShortage::Never));
    }

    #[test]
    fn time_shared_scales_uniformly_under_oversubscription() {
        let got = time_shared_shares(&[1000.0; 2], &[d(2, 1000.0), d(2, 1000.0)]);
        assert_eq!(got, vec![MipsShare(vec![500.0, 500.0]); 2]);
        let got = time_shared_shares(&[1000.0], &[d(1, 1000.0); 3]);
        for s in got {
            assert!((s.0[0] - 1000.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(time_shared_shares(&[1000.0; 2], &[d(1, 700.0)]), vec![MipsShare(vec![700.0])]);
    }

    #[test]
    fn cloudlet_rates_follow_policy() {
        let full = MipsShare(vec![1000.0, 1000.0]);
        assert_eq!(cloudlet_shares(SchedulingPolicy::TimeShared, &full, 4), vec![500.0; 4]);
        let halved = MipsShare(vec![500.0, 500.0]);
        assert_eq!(cloudlet_shares(SchedulingPolicy::TimeShared, &halved, 4), vec![250.0; 4]);
        // A lone task cannot use both cores.
        assert_eq!(cloudlet_shares(SchedulingPolicy::TimeShared, &full, 1), vec![1000.0]);
        assert_eq!(cloudlet_shares(SchedulingPolicy::SpaceShared, &full, 3), vec![1000.0, 1000.0, 0.0]);
    }

    #[test]
    fn dedicated_core_predicts_exact_completion() {
        let share = MipsShare(vec![1000.0]);
        let mut s = CloudletScheduler::new(SchedulingPolicy::SpaceShared, t(0.0));
        s.submit(cl(0, 1.2e6));
        let out = s.update(t(0.0), &share).unwrap();
        assert_eq!(out.next_completion, Some(t(1200.0)));
        let out = s.update(t(1200.0), &share).unwrap();
        assert_eq!(out.finished.len(), 1);
        assert_eq!(out.finished[0].finish_time, Some(t(1200.0)));
        assert_eq!(out.finished[0].remaining_mi, 0.0);
        assert_eq!(out.finished[0].cpu_time, 1200.0);
        assert!(s.is_empty());
    }

    #[test]
    fn earliest_of_two_dedicated_completions() {
        let share = MipsShare(vec![1000.0, 1000.0]);
        let mut s = CloudletScheduler::new(SchedulingPolicy::SpaceShared, t(0.0));
        s.submit(cl(0, 100.0));
        s.submit(cl(1, 300.0));
        assert_eq!(s.update(t(0.0), &share).unwrap().next_completion, Some(t(0.1)));
    }

    #[test]
    fn rate_change_midway_is_integrated_piecewise() {
        let mut s = CloudletScheduler::new(SchedulingPolicy::TimeShared, t(0.0));
        s.submit(cl(0, 1.2e6));
        s.update(t(0.0), &MipsShare(vec![1000.0])).unwrap();
        let out = s.update(t(600.0), &MipsShare(vec![500.0])).unwrap();
        assert!(out.finished.is_empty());
        assert_eq!(out.next_completion, Some(t(1800.0)));
        let out = s.update(t(1800.0), &MipsShare(vec![500.0])).unwrap();
        assert_eq!(out.finished[0].finish_time, Some(t(1800.0)));
    }

    #[test]
    fn finish_time_is_the_crossing_not_the_update_instant() {
        let share = MipsShare(vec![1000.0]);
        let mut s = CloudletScheduler::new(SchedulingPolicy::SpaceShared, t(0.0));
        s.submit(cl(0, 500.0));
        s.update(t(0.0), &share).unwrap();
        let out = s.update(t(2.0), &share).unwrap();
        assert_eq!(out.finished[0].finish_time, Some(t(0.5)));
        assert_eq!(out.finished[0].cpu_time, 0.5);
    }

    #[test]
    fn zero_length_finishes_at_start() {
        let mut s = CloudletScheduler::new(SchedulingPolicy::SpaceShared, t(5.0));
        s.submit(cl(0, 0.0));
        let out = s.update(t(5.0), &MipsShare(vec![1000.0])).unwrap();
        assert_eq!(out.finished.len(), 1);
        assert_eq!(out.finished[0].start_time, Some(t(5.0)));
        assert_eq!(out.finished[0].finish_time, Some(t(5.0)));
        assert_eq!(out.finished[0].cpu_time, 0.0);
    }

    #[test]
    fn space_shared_queue_is_fifo() {
        let share = MipsShare(vec![1000.0]);
        let mut s = CloudletScheduler::new(SchedulingPolicy::SpaceShared, t(0.0));
        for i in 0..3 {
            s.submit(cl(i, 1000.0));
        }
        s.update(t(0.0), &share).unwrap();
        assert_eq!((s.running_count(), s.waiting_count()), (1, 2));
        let ids: Vec<u32> = (1..=3)
            .flat_map(|k| s.update(t(k as f64), &share).unwrap().finished)
            .map(|c| c.id.0)
            .collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn backwards_update_is_an_error() {
        let mut s = CloudletScheduler::new(SchedulingPolicy::TimeShared, t(10.0));
        assert!(matches!(
            s.update(t(9.0), &MipsShare(vec![1.0])),
            Err(SchedulingError::TimeWentBackwards { .. })
        ));
    }

    #[test]
    fn drain_keeps_remaining_work() {
        let share = MipsShare(vec![1000.0]);
        let mut s = CloudletScheduler::new(SchedulingPolicy::SpaceShared, t(0.0));
        s.submit(cl(0, 1000.0));
        s.submit(cl(1, 1000.0));
        s.update(t(0.0), &share).unwrap();
        s.update(t(0.6), &share).unwrap();
        let out = s.drain();
        assert!((out[0].remaining_mi - 400.0).abs() < 1e-9);
        assert_eq!(out[1].remaining_mi, 1000.0);
        assert!(out.iter().all(|c| c.status == CloudletStatus::Paused));
    }
}
