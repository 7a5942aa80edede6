//! Per-region, per-short-slot offloading environment.
//!
//! An episode replays one day: `H` long slots of `T` short slots each. Within
//! a short slot the regions are visited in catalog order, each visit being
//! one decision step for the region's active users.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    exec_time, queue_time, rented_resources, task_revenue, total_time, upload_rate, upload_time, SliceDecision,
    TaskSpec, VmQueue,
};
use crate::scenario::Scenario;
use crate::traffic::TrafficSeries;

/// Observation of one region at the start of its decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSnapshot {
    pub region: usize,
    pub long_slot: usize,
    pub short_slot: usize,
    pub rented_bandwidth_hz: f64,
    pub rented_vm_count: u32,
    pub user_count: usize,
    /// `d·l / T^max` per user slot, zero-padded to `N_max`.
    pub uplink_demand: Vec<f64>,
    /// `d·η / T^max` per user slot, zero-padded to `N_max`.
    pub compute_demand: Vec<f64>,
    pub priorities: Vec<f64>,
    /// The active users' tasks, in user index order.
    pub tasks: Vec<TaskSpec>,
}

impl RegionSnapshot {
    pub fn n_max(&self) -> usize {
        self.uplink_demand.len()
    }

    /// Raw state vector `[B, V, N, uplink.., compute.., ρ..]`.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + 3 * self.n_max());
        v.push(self.rented_bandwidth_hz);
        v.push(f64::from(self.rented_vm_count));
        v.push(self.user_count as f64);
        v.extend_from_slice(&self.uplink_demand);
        v.extend_from_slice(&self.compute_demand);
        v.extend_from_slice(&self.priorities);
        v
    }

    /// State vector divided componentwise by `scale`.
    pub fn features(&self, scale: &FeatureScale) -> Vec<f64> {
        let n = self.n_max();
        let mut v = self.state_vector();
        v[0] /= scale.bandwidth_hz;
        v[1] /= scale.vms;
        v[2] /= scale.users;
        for k in 0..n {
            v[3 + k] /= scale.uplink;
            v[3 + n + k] /= scale.compute;
            v[3 + 2 * n + k] /= scale.priority;
        }
        v
    }
}

/// Normalizers mapping state components to roughly `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub bandwidth_hz: f64,
    pub vms: f64,
    pub users: f64,
    pub uplink: f64,
    pub compute: f64,
    pub priority: f64,
}

impl FeatureScale {
    /// Largest values the scenario can produce.
    pub fn for_scenario(s: &Scenario) -> Self {
        let max_kb = s.regions.iter().map(|r| r.data_kb.hi).fold(0.0, f64::max);
        let max_bits = max_kb * crate::scenario::BITS_PER_KB;
        let max_cycles = s
            .regions
            .iter()
            .map(|r| r.data_kb.hi * crate::scenario::BITS_PER_KB * r.density_cycles_per_bit.hi)
            .fold(0.0, f64::max);
        let t = s.econ.max_delay_s;
        Self {
            bandwidth_hz: s.max_bandwidth_hz(),
            vms: f64::from(s.max_vms()),
            users: s.n_max as f64,
            uplink: (max_bits * s.distance_m.hi / t).max(f64::MIN_POSITIVE),
            compute: (max_cycles / t).max(f64::MIN_POSITIVE),
            priority: f64::from(s.priorities.iter().copied().max().unwrap_or(1)),
        }
    }
}

/// Raw agent output: `N_max` bandwidth fractions and `N_max` VM selectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector {
    pub bandwidth_fractions: Vec<f64>,
    pub vm_selectors: Vec<f64>,
}

impl ActionVector {
    /// Splits a flat `[b.., x..]` vector of length `2·N_max`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::contract("flat action length must be even"));
        }
        let (b, x) = flat.split_at(flat.len() / 2);
        Ok(Self {
            bandwidth_fractions: b.to_vec(),
            vm_selectors: x.to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.bandwidth_fractions.clone();
        v.extend_from_slice(&self.vm_selectors);
        v
    }
}

/// Decoded per-user allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub bandwidth_hz: Vec<f64>,
    pub vm_index: Vec<usize>,
}

fn unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Maps a raw action to per-user bandwidth and VM indices for the snapshot's
/// active users. Fractions are divided by their sum when it exceeds one, so
/// the total never exceeds the rented bandwidth.
pub fn decode_action(raw: &ActionVector, snapshot: &RegionSnapshot) -> Allocation {
    let n = snapshot.user_count;
    let mut fractions: Vec<f64> = (0..n)
        .map(|j| raw.bandwidth_fractions.get(j).copied().map_or(0.0, unit))
        .collect();
    let sum: f64 = fractions.iter().sum();
    if sum > 1.0 {
        for f in &mut fractions {
            *f /= sum;
        }
    }
    let vms = snapshot.rented_vm_count.max(1) as usize;
    let vm_index = (0..n)
        .map(|j| {
            let x = raw.vm_selectors.get(j).copied().map_or(0.0, unit);
            ((x * vms as f64).floor() as usize).min(vms - 1)
        })
        .collect();
    let cap = snapshot.rented_bandwidth_hz;
    let mut bandwidth_hz: Vec<f64> = fractions.iter().map(|f| f * cap).collect();
    // rounding in the products can overshoot the cap by a few ulps
    loop {
        let total: f64 = bandwidth_hz.iter().sum();
        if total <= cap {
            break;
        }
        let shrink = cap / total * (1.0 - f64::EPSILON);
        bandwidth_hz.iter_mut().for_each(|b| *b *= shrink);
    }
    Allocation { bandwidth_hz, vm_index }
}

/// Outcome of one offloaded task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub user: usize,
    pub bandwidth_hz: f64,
    pub vm: usize,
    pub priority: u8,
    pub upload_s: f64,
    pub queue_s: f64,
    pub exec_s: f64,
    pub total_s: f64,
    pub revenue: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub region: usize,
    pub long_slot: usize,
    pub short_slot: usize,
    pub tasks: Vec<TaskRecord>,
    pub rented_bandwidth_hz: f64,
    pub rented_vm_count: u32,
    /// Σ allocated bandwidth × upload time, each upload capped at the slot.
    pub used_bandwidth_s: f64,
    /// VM busy time spent during this slot.
    pub used_vm_s: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Next region's observation; `None` once the episode is over.
    pub next: Option<RegionSnapshot>,
    pub done: bool,
    pub info: StepInfo,
}

/// One CSV trace row per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub day: usize,
    pub long_slot: usize,
    pub short_slot: usize,
    pub region: String,
    pub record: TaskRecord,
}

#[derive(Debug, Clone)]
struct RegionState {
    decision: SliceDecision,
    bandwidth_hz: f64,
    vms: u32,
    queues: Vec<VmQueue>,
    /// Arrival sequence numbers parallel to `queues`.
    arrivals: Vec<VecDeque<u64>>,
}

impl RegionState {
    fn new(decision: SliceDecision, bandwidth_hz: f64, vms: u32) -> Self {
        Self {
            decision,
            bandwidth_hz,
            vms,
            queues: vec![VmQueue::new(); vms as usize],
            arrivals: vec![VecDeque::new(); vms as usize],
        }
    }
}

#[derive(Debug, Clone)]
pub struct OffloadEnv {
    scenario: Scenario,
    traffic: TrafficSeries,
    initial: Vec<SliceDecision>,
    schedule: Option<Vec<Vec<SliceDecision>>>,
    day: usize,
    rng: ChaCha8Rng,
    regions: Vec<RegionState>,
    long_slot: usize,
    short_slot: usize,
    region: usize,
    current: Option<RegionSnapshot>,
    next_arrival: u64,
    trace: Option<Vec<TraceRow>>,
}

impl OffloadEnv {
    /// Builds an environment replaying the first `H·T` slots of `traffic`
    /// under the initial slice decisions.
    pub fn new(scenario: Scenario, traffic: TrafficSeries, decisions: Vec<SliceDecision>) -> Result<Self> {
        scenario.validate()?;
        let ids = scenario.region_ids();
        if traffic.region_ids() != ids.as_slice() {
            return Err(Error::config(format!(
                "traffic regions {:?} do not match scenario regions {:?}",
                traffic.region_ids(),
                ids
            )));
        }
        let needed = scenario.econ.long_slots * scenario.econ.short_slots_per_long;
        if traffic.len() < needed {
            return Err(Error::config(format!(
                "traffic covers {} slots, an episode needs {needed}",
                traffic.len()
            )));
        }
        let peak = traffic.window(0..needed)?.max_count() as usize;
        if peak > scenario.n_max {
            return Err(Error::config(format!(
                "traffic peak {peak} exceeds n_max {}",
                scenario.n_max
            )));
        }
        Self::check_decisions(&scenario, &decisions)?;
        let mut env = Self {
            scenario,
            traffic,
            initial: decisions,
            schedule: None,
            day: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            regions: Vec::new(),
            long_slot: 0,
            short_slot: 0,
            region: 0,
            current: None,
            next_arrival: 0,
            trace: None,
        };
        env.install_initial()?;
        Ok(env)
    }

    fn check_decisions(scenario: &Scenario, decisions: &[SliceDecision]) -> Result<()> {
        if decisions.len() != scenario.regions.len() {
            return Err(Error::contract(format!(
                "{} slice decisions for {} regions",
                decisions.len(),
                scenario.regions.len()
            )));
        }
        for (d, r) in decisions.iter().zip(&scenario.regions) {
            if d.region_id != r.catalog.region_id {
                return Err(Error::RegionMismatch {
                    expected: r.catalog.region_id.clone(),
                    found: d.region_id.clone(),
                });
            }
            d.validate(&r.catalog)?;
        }
        Ok(())
    }

    fn region_state(&self, r: usize, decision: SliceDecision) -> Result<RegionState> {
        let (bw, vms) = rented_resources(&decision, &self.scenario.regions[r].catalog)?;
        Ok(RegionState::new(decision, bw, vms))
    }

    fn install_initial(&mut self) -> Result<()> {
        let first = match &self.schedule {
            Some(s) => s[0].clone(),
            None => self.initial.clone(),
        };
        self.regions = first
            .into_iter()
            .enumerate()
            .map(|(r, d)| self.region_state(r, d))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Per-long-slot decisions applied automatically at every boundary;
    /// entry `h` is in force during long slot `h`. Takes effect on reset.
    pub fn set_schedule(&mut self, schedule: Vec<Vec<SliceDecision>>) -> Result<()> {
        if schedule.len() != self.scenario.econ.long_slots {
            return Err(Error::contract(format!(
                "schedule has {} entries, expected {}",
                schedule.len(),
                self.scenario.econ.long_slots
            )));
        }
        for d in &schedule {
            Self::check_decisions(&self.scenario, d)?;
        }
        self.schedule = Some(schedule);
        Ok(())
    }

    /// Label written to the trace's `day` column.
    pub fn set_day(&mut self, day: usize) {
        self.day = day;
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn n_max(&self) -> usize {
        self.scenario.n_max
    }

    pub fn state_dim(&self) -> usize {
        3 + 3 * self.scenario.n_max
    }

    pub fn action_dim(&self) -> usize {
        2 * self.scenario.n_max
    }

    pub fn steps_per_episode(&self) -> usize {
        self.scenario.econ.long_slots * self.scenario.econ.short_slots_per_long * self.scenario.regions.len()
    }

    pub fn current_decisions(&self) -> Vec<SliceDecision> {
        self.regions.iter().map(|r| r.decision.clone()).collect()
    }

    pub fn is_done(&self) -> bool {
        self.current.is_none()
    }

    pub fn long_slot(&self) -> usize {
        self.long_slot
    }

    /// True before the first step of a long slot.
    pub fn at_long_slot_boundary(&self) -> bool {
        self.current.is_some() && self.short_slot == 0 && self.region == 0
    }

    /// Current observation; `None` after the final step.
    pub fn observe(&self) -> Option<&RegionSnapshot> {
        self.current.as_ref()
    }

    /// Starts a new episode: empty queues, first region of the first slot.
    pub fn reset(&mut self, seed: u64) -> Result<RegionSnapshot> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.install_initial()?;
        self.long_slot = 0;
        self.short_slot = 0;
        self.region = 0;
        self.next_arrival = 0;
        if let Some(t) = &mut self.trace {
            t.clear();
        }
        let snap = self.sample_snapshot();
        self.current = Some(snap.clone());
        Ok(snap)
    }

    fn sample_snapshot(&mut self) -> RegionSnapshot {
        let r = self.region;
        let slot = self.long_slot * self.scenario.econ.short_slots_per_long + self.short_slot;
        let n = self.traffic.count(r, slot) as usize;
        let tasks: Vec<TaskSpec> = (0..n).map(|_| self.scenario.sample_task(r, &mut self.rng)).collect();
        let n_max = self.scenario.n_max;
        let t = self.scenario.econ.max_delay_s;
        let mut uplink = vec![0.0; n_max];
        let mut compute = vec![0.0; n_max];
        let mut priorities = vec![0.0; n_max];
        for (j, task) in tasks.iter().enumerate() {
            uplink[j] = task.data_bits * task.distance_m / t;
            compute[j] = task.cycles() / t;
            priorities[j] = f64::from(task.priority.level());
        }
        let state = &self.regions[r];
        RegionSnapshot {
            region: r,
            long_slot: self.long_slot,
            short_slot: self.short_slot,
            rented_bandwidth_hz: state.bandwidth_hz,
            rented_vm_count: state.vms,
            user_count: n,
            uplink_demand: uplink,
            compute_demand: compute,
            priorities,
            tasks,
        }
    }

    /// Executes the current region's tasks under `action`, drains that
    /// region's VMs for one slot, and moves to the next region.
    pub fn step(&mut self, action: &ActionVector) -> Result<StepOutcome> {
        let snap = self.current.take().ok_or(Error::EpisodeFinished)?;
        let alloc = decode_action(action, &snap);
        let r = snap.region;
        let radio = self.scenario.radio;
        let econ = self.scenario.econ;
        let slot_s = self.scenario.slot_duration_s;
        let freq = self.scenario.regions[r].catalog.vm_freq_hz;
        let state = &mut self.regions[r];
        let mut records = Vec::with_capacity(snap.user_count);
        let mut reward = 0.0;
        let mut used_bw = 0.0;
        for (j, task) in snap.tasks.iter().enumerate() {
            let bw = alloc.bandwidth_hz[j];
            let vm = alloc.vm_index[j];
            let rate = upload_rate(bw, task.distance_m, &radio)?;
            let up = upload_time(task, rate)?;
            let queue = queue_time(&state.queues[vm], freq)?;
            let exec = exec_time(task, freq)?;
            let total = total_time(up, queue, exec);
            let revenue = task_revenue(total, &econ, task.priority);
            if up.is_finite() {
                state.queues[vm].push(task.cycles())?;
                state.arrivals[vm].push_back(self.next_arrival);
                self.next_arrival += 1;
            }
            used_bw += bw * up.min(slot_s);
            reward += revenue;
            records.push(TaskRecord {
                user: j,
                bandwidth_hz: bw,
                vm,
                priority: task.priority.level(),
                upload_s: up,
                queue_s: queue,
                exec_s: exec,
                total_s: total,
                revenue,
                violated: !(total <= econ.max_delay_s),
            });
        }
        let mut used_vm = 0.0;
        for (q, a) in state.queues.iter_mut().zip(&mut state.arrivals) {
            used_vm += q.drain(slot_s, freq);
            while a.len() > q.len() {
                a.pop_front();
            }
        }
        let info = StepInfo {
            region: r,
            long_slot: snap.long_slot,
            short_slot: snap.short_slot,
            violations: records.iter().filter(|t| t.violated).count(),
            rented_bandwidth_hz: state.bandwidth_hz,
            rented_vm_count: state.vms,
            used_bandwidth_s: used_bw,
            used_vm_s: used_vm,
            tasks: records,
        };
        if let Some(trace) = &mut self.trace {
            let region = self.scenario.regions[r].catalog.region_id.clone();
            trace.extend(info.tasks.iter().map(|rec| TraceRow {
                day: self.day,
                long_slot: snap.long_slot,
                short_slot: snap.short_slot,
                region: region.clone(),
                record: *rec,
            }));
        }
        let done = !self.advance()?;
        let next = if done {
            None
        } else {
            let s = self.sample_snapshot();
            self.current = Some(s.clone());
            Some(s)
        };
        Ok(StepOutcome {
            reward,
            next,
            done,
            info,
        })
    }

    /// Moves the cursor; returns false when the episode is over.
    fn advance(&mut self) -> Result<bool> {
        self.region += 1;
        if self.region < self.regions.len() {
            return Ok(true);
        }
        self.region = 0;
        self.short_slot += 1;
        if self.short_slot < self.scenario.econ.short_slots_per_long {
            return Ok(true);
        }
        self.short_slot = 0;
        self.long_slot += 1;
        if self.long_slot >= self.scenario.econ.long_slots {
            return Ok(false);
        }
        if let Some(schedule) = &self.schedule {
            let next = schedule[self.long_slot].clone();
            self.change_slices(next)?;
        }
        Ok(true)
    }

    /// Replaces the rented slices. Allowed only at a long-slot boundary;
    /// pending work is spread round-robin, in arrival order, over the new
    /// VM set. The current observation is refreshed to the new rental.
    pub fn apply_slice_change(&mut self, decisions: Vec<SliceDecision>) -> Result<()> {
        if !self.at_long_slot_boundary() {
            return Err(Error::contract("slice changes are only allowed at long-slot boundaries"));
        }
        Self::check_decisions(&self.scenario, &decisions)?;
        self.change_slices(decisions)?;
        if let Some(snap) = &mut self.current {
            let s = &self.regions[snap.region];
            snap.rented_bandwidth_hz = s.bandwidth_hz;
            snap.rented_vm_count = s.vms;
        }
        Ok(())
    }

    fn change_slices(&mut self, decisions: Vec<SliceDecision>) -> Result<()> {
        for (r, d) in decisions.into_iter().enumerate() {
            if d == self.regions[r].decision {
                continue;
            }
            let mut next = self.region_state(r, d)?;
            let old = &mut self.regions[r];
            let mut pending: Vec<(u64, f64)> = Vec::new();
            for (q, a) in old.queues.iter_mut().zip(&mut old.arrivals) {
                pending.extend(a.drain(..).zip(q.take_all()));
            }
            pending.sort_by_key(|(seq, _)| *seq);
            let k = next.queues.len();
            for (i, (seq, cycles)) in pending.into_iter().enumerate() {
                next.queues[i % k].push(cycles)?;
                next.arrivals[i % k].push_back(seq);
            }
            self.regions[r] = next;
        }
        Ok(())
    }

    /// Pending cycles per VM of region `r`.
    pub fn backlog(&self, r: usize) -> Vec<Vec<f64>> {
        self.regions[r].queues.iter().map(|q| q.entries().collect()).collect()
    }

    /// Replaces region `r`'s backlog; test and scenario-setup hook.
    pub fn set_backlog(&mut self, r: usize, backlog: Vec<Vec<f64>>) -> Result<()> {
        let state = &mut self.regions[r];
        if backlog.len() != state.queues.len() {
            return Err(Error::contract("backlog must list every rented VM"));
        }
        // arrival order: position in queue first, then VM index
        let depth = backlog.iter().map(Vec::len).max().unwrap_or(0);
        let mut seqs: Vec<VecDeque<u64>> = vec![VecDeque::new(); backlog.len()];
        for pos in 0..depth {
            for (vm, entries) in backlog.iter().enumerate() {
                if pos < entries.len() {
                    seqs[vm].push_back(self.next_arrival);
                    self.next_arrival += 1;
                }
            }
        }
        state.queues = backlog
            .into_iter()
            .map(VmQueue::from_cycles)
            .collect::<Result<_>>()?;
        state.arrivals = seqs;
        Ok(())
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_trace_csv(path, self.trace())
    }
}

fn fmt_time(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.9}")
    } else {
        "inf".to_string()
    }
}

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "day,long_slot,short_slot,region,user,upload_s,queue_s,exec_s,total_s,revenue")?;
    for row in rows {
        let t = &row.record;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            row.day,
            row.long_slot,
            row.short_slot,
            row.region,
            t.user,
            fmt_time(t.upload_s),
            fmt_time(t.queue_s),
            fmt_time(t.exec_s),
            fmt_time(t.total_s),
            t.revenue
        )?;
    }
    f.flush()?;
    Ok(())
}
