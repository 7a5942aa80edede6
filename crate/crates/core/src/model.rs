//! Communication, computation and profit model of a multi-edge system.
//!
//! All quantities are SI unless a field name says otherwise: bandwidth in Hz,
//! data in bits, frequencies in cycles per second, times in seconds. Radio
//! parameters given in dB / dBm are converted to linear scale once, at
//! construction, and never stored in logarithmic form.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a power ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// dBm to milliwatts. Identical to [`db_to_linear`] with 1 mW as reference.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// Uplink radio parameters, stored linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub upload_power_mw: f64,
    pub noise_power_mw: f64,
    pub gain_ref: f64,
    pub path_loss_exp: f64,
}

impl RadioParams {
    pub fn new(
        upload_power_mw: f64,
        noise_power_mw: f64,
        gain_ref: f64,
        path_loss_exp: f64,
    ) -> Result<Self> {
        let params = Self {
            upload_power_mw,
            noise_power_mw,
            gain_ref,
            path_loss_exp,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds the parameters from the usual logarithmic datasheet values.
    pub fn from_db(
        upload_power_mw: f64,
        noise_power_dbm: f64,
        gain_ref_db: f64,
        path_loss_exp: f64,
    ) -> Result<Self> {
        Self::new(
            upload_power_mw,
            dbm_to_mw(noise_power_dbm),
            db_to_linear(gain_ref_db),
            path_loss_exp,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.upload_power_mw,
            self.noise_power_mw,
            self.gain_ref,
            self.path_loss_exp,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain("radio parameters must be finite and > 0"));
        }
        if self.path_loss_exp < 1.0 {
            return Err(Error::domain("path loss exponent must be >= 1"));
        }
        Ok(())
    }

    /// Received signal-to-noise ratio at `distance_m` from the base station.
    pub fn snr(&self, distance_m: f64) -> f64 {
        let gain = self.gain_ref * distance_m.powf(-self.path_loss_exp);
        self.upload_power_mw * gain / self.noise_power_mw
    }

    /// Spectral efficiency log2(1 + SNR) in bit/s/Hz.
    pub fn spectral_efficiency(&self, distance_m: f64) -> f64 {
        (1.0 + self.snr(distance_m)).log2()
    }
}

/// Service level of a task. Completed tasks earn `reward × priority`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Priority(u8);

impl Priority {
    pub const LOW: Priority = Priority(1);
    pub const MEDIUM: Priority = Priority(2);
    pub const HIGH: Priority = Priority(3);

    pub fn new(level: u8) -> Result<Self> {
        if (1..=3).contains(&level) {
            Ok(Priority(level))
        } else {
            Err(Error::domain(format!("priority {level} outside 1..=3")))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn weight(self) -> f64 {
        f64::from(self.0)
    }
}

impl TryFrom<u8> for Priority {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Priority::new(value)
    }
}

impl From<Priority> for u8 {
    fn from(p: Priority) -> u8 {
        p.0
    }
}

/// One offloaded task: data size, computing density, priority and the
/// distance between its user and the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub data_bits: f64,
    pub density_cycles_per_bit: f64,
    pub priority: Priority,
    pub distance_m: f64,
}

impl TaskSpec {
    pub fn new(
        data_bits: f64,
        density_cycles_per_bit: f64,
        priority: Priority,
        distance_m: f64,
    ) -> Result<Self> {
        let task = Self {
            data_bits,
            density_cycles_per_bit,
            priority,
            distance_m,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data_bits.is_finite() && self.data_bits > 0.0) {
            return Err(Error::domain("task data size must be > 0"));
        }
        if !(self.density_cycles_per_bit.is_finite() && self.density_cycles_per_bit >= 0.0) {
            return Err(Error::domain("computing density must be >= 0"));
        }
        if !(self.distance_m.is_finite() && self.distance_m >= 1.0) {
            return Err(Error::domain("user distance must be >= 1 m"));
        }
        Ok(())
    }

    /// CPU cycles needed to execute the task.
    pub fn cycles(&self) -> f64 {
        self.data_bits * self.density_cycles_per_bit
    }
}

/// Tiered bandwidth and VM offers of one region's infrastructure provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCatalog {
    pub region_id: String,
    pub bandwidth_tiers_hz: Vec<f64>,
    /// Price of each bandwidth tier per long slot.
    pub bandwidth_costs: Vec<f64>,
    pub vm_tiers: Vec<u32>,
    pub vm_costs: Vec<f64>,
    pub vm_freq_hz: f64,
}

impl SliceCatalog {
    pub fn new(
        region_id: impl Into<String>,
        bandwidth_tiers_hz: Vec<f64>,
        bandwidth_costs: Vec<f64>,
        vm_tiers: Vec<u32>,
        vm_costs: Vec<f64>,
        vm_freq_hz: f64,
    ) -> Result<Self> {
        let catalog = Self {
            region_id: region_id.into(),
            bandwidth_tiers_hz,
            bandwidth_costs,
            vm_tiers,
            vm_costs,
            vm_freq_hz,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    /// Arithmetic tier ladders: tiers `1..=bw_count` MHz priced
    /// `k × bw_step_cost`, and `1..=vm_count` VMs priced `k × vm_step_cost`.
    pub fn linear(
        region_id: impl Into<String>,
        bw_count: usize,
        bw_step_cost: f64,
        vm_count: usize,
        vm_step_cost: f64,
        vm_freq_hz: f64,
    ) -> Result<Self> {
        let bw_tiers = (1..=bw_count).map(|k| k as f64 * 1e6).collect();
        let bw_costs = (1..=bw_count).map(|k| k as f64 * bw_step_cost).collect();
        let vm_tiers = (1..=vm_count as u32).collect();
        let vm_costs = (1..=vm_count).map(|k| k as f64 * vm_step_cost).collect();
        Self::new(region_id, bw_tiers, bw_costs, vm_tiers, vm_costs, vm_freq_hz)
    }

    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialOrd + Copy>(name: &str, tiers: &[T], costs: &[f64]) -> Result<()> {
            if tiers.is_empty() || tiers.len() != costs.len() {
                return Err(Error::domain(format!(
                    "{name}: tier and cost lists must be non-empty and of equal length"
                )));
            }
            if tiers.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::domain(format!("{name}: tiers must be strictly ascending")));
            }
            if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(Error::domain(format!("{name}: costs must be > 0")));
            }
            Ok(())
        }
        check("bandwidth", &self.bandwidth_tiers_hz, &self.bandwidth_costs)?;
        check("vm", &self.vm_tiers, &self.vm_costs)?;
        if self.bandwidth_tiers_hz[0] < 0.0 || self.vm_tiers[0] == 0 {
            return Err(Error::domain("tiers must be positive"));
        }
        if !(self.vm_freq_hz.is_finite() && self.vm_freq_hz > 0.0) {
            return Err(Error::domain("VM frequency must be > 0"));
        }
        Ok(())
    }

    pub fn max_bandwidth_hz(&self) -> f64 {
        *self.bandwidth_tiers_hz.last().expect("validated catalog")
    }

    pub fn max_vms(&self) -> u32 {
        *self.vm_tiers.last().expect("validated catalog")
    }
}

/// One-hot renting choice over a region's bandwidth and VM tiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceDecision {
    pub region_id: String,
    pub bandwidth_choice: Vec<u8>,
    pub vm_choice: Vec<u8>,
}

impl SliceDecision {
    /// Decision renting bandwidth tier `bw_index` and VM tier `vm_index`
    /// (zero-based) of `catalog`.
    pub fn from_indices(catalog: &SliceCatalog, bw_index: usize, vm_index: usize) -> Result<Self> {
        let nb = catalog.bandwidth_tiers_hz.len();
        let nv = catalog.vm_tiers.len();
        if bw_index >= nb || vm_index >= nv {
            return Err(Error::contract(format!(
                "tier index ({bw_index}, {vm_index}) outside catalog {} ({nb}, {nv})",
                catalog.region_id
            )));
        }
        Ok(Self {
            region_id: catalog.region_id.clone(),
            bandwidth_choice: one_hot(nb, bw_index),
            vm_choice: one_hot(nv, vm_index),
        })
    }

    /// Zero-based index of the rented bandwidth tier.
    pub fn bandwidth_index(&self) -> Result<usize> {
        hot_index(&self.bandwidth_choice, "bandwidth")
    }

    pub fn vm_index(&self) -> Result<usize> {
        hot_index(&self.vm_choice, "vm")
    }

    /// Checks C1–C3 against the catalog's dimensions.
    pub fn validate(&self, catalog: &SliceCatalog) -> Result<()> {
        if self.region_id != catalog.region_id {
            return Err(Error::RegionMismatch {
                expected: catalog.region_id.clone(),
                found: self.region_id.clone(),
            });
        }
        if self.bandwidth_choice.len() != catalog.bandwidth_tiers_hz.len()
            || self.vm_choice.len() != catalog.vm_tiers.len()
        {
            return Err(Error::contract("one-hot length differs from catalog"));
        }
        self.bandwidth_index()?;
        self.vm_index()?;
        Ok(())
    }
}

pub(crate) fn one_hot(len: usize, index: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    v[index] = 1;
    v
}

fn hot_index(v: &[u8], what: &str) -> Result<usize> {
    if v.iter().any(|&x| x > 1) {
        return Err(Error::contract(format!("{what} choice has entries outside {{0,1}}")));
    }
    let mut ones = v.iter().enumerate().filter(|(_, &x)| x == 1);
    match (ones.next(), ones.next()) {
        (Some((i, _)), None) => Ok(i),
        _ => Err(Error::contract(format!("{what} choice must contain exactly one 1"))),
    }
}

/// FIFO of cycle counts still to be executed on one VM.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VmQueue {
    pending_cycles: VecDeque<f64>,
}

impl VmQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_cycles(cycles: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut q = Self::new();
        for c in cycles {
            q.push(c)?;
        }
        Ok(q)
    }

    pub fn push(&mut self, cycles: f64) -> Result<()> {
        if !(cycles.is_finite() && cycles >= 0.0) {
            return Err(Error::domain("queued cycles must be finite and >= 0"));
        }
        self.pending_cycles.push_back(cycles);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pending_cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending_cycles.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.pending_cycles.iter().copied()
    }

    pub fn total_cycles(&self) -> f64 {
        self.pending_cycles.iter().sum()
    }

    /// Runs the VM for `seconds` at `freq_hz`, completing entries in FIFO
    /// order. Returns the busy time actually spent.
    pub fn drain(&mut self, seconds: f64, freq_hz: f64) -> f64 {
        let mut budget = seconds * freq_hz;
        let mut used = 0.0;
        while let Some(front) = self.pending_cycles.front_mut() {
            if *front <= budget {
                budget -= *front;
                used += *front;
                self.pending_cycles.pop_front();
            } else {
                *front -= budget;
                used += budget;
                break;
            }
        }
        used / freq_hz
    }

    pub(crate) fn take_all(&mut self) -> VecDeque<f64> {
        std::mem::take(&mut self.pending_cycles)
    }
}

/// Revenue, deadline and slot hierarchy of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicParams {
    pub reward_per_task: f64,
    pub max_delay_s: f64,
    pub long_slots: usize,
    pub short_slots_per_long: usize,
}

impl EconomicParams {
    pub fn new(
        reward_per_task: f64,
        max_delay_s: f64,
        long_slots: usize,
        short_slots_per_long: usize,
    ) -> Result<Self> {
        let econ = Self {
            reward_per_task,
            max_delay_s,
            long_slots,
            short_slots_per_long,
        };
        econ.validate()?;
        Ok(econ)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reward_per_task.is_finite() && self.reward_per_task > 0.0) {
            return Err(Error::domain("reward per task must be > 0"));
        }
        if !(self.max_delay_s.is_finite() && self.max_delay_s > 0.0) {
            return Err(Error::domain("maximum delay must be > 0"));
        }
        if self.long_slots == 0 || self.short_slots_per_long == 0 {
            return Err(Error::domain("slot counts must be >= 1"));
        }
        Ok(())
    }
}

/// Shannon uplink rate of a user allocated `bandwidth_hz` at `distance_m`.
pub fn upload_rate(bandwidth_hz: f64, distance_m: f64, radio: &RadioParams) -> Result<f64> {
    if !(bandwidth_hz >= 0.0) {
        return Err(Error::domain(format!("negative bandwidth {bandwidth_hz}")));
    }
    if !(distance_m >= 1.0) {
        return Err(Error::domain(format!("distance {distance_m} m below 1 m")));
    }
    if bandwidth_hz == 0.0 {
        return Ok(0.0);
    }
    Ok(bandwidth_hz * radio.spectral_efficiency(distance_m))
}

/// Time to push the task's input to the base station. A stalled link
/// (`rate == 0`) with a non-empty payload yields `+inf`.
pub fn upload_time(task: &TaskSpec, rate_bits_per_s: f64) -> Result<f64> {
    if !(rate_bits_per_s >= 0.0) {
        return Err(Error::domain("upload rate must be >= 0"));
    }
    if task.data_bits == 0.0 {
        return Ok(0.0);
    }
    if rate_bits_per_s == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(task.data_bits / rate_bits_per_s)
}

pub fn exec_time(task: &TaskSpec, vm_freq_hz: f64) -> Result<f64> {
    check_freq(vm_freq_hz)?;
    Ok(task.cycles() / vm_freq_hz)
}

/// Waiting time behind the backlog already present on a VM.
pub fn queue_time(queue: &VmQueue, vm_freq_hz: f64) -> Result<f64> {
    check_freq(vm_freq_hz)?;
    Ok(queue.entries().map(|c| c / vm_freq_hz).sum())
}

fn check_freq(vm_freq_hz: f64) -> Result<()> {
    if !(vm_freq_hz.is_finite() && vm_freq_hz > 0.0) {
        return Err(Error::domain(format!("VM frequency {vm_freq_hz} must be > 0")));
    }
    Ok(())
}

pub fn total_time(upload_s: f64, queue_s: f64, exec_s: f64) -> f64 {
    upload_s + queue_s + exec_s
}

/// Revenue of one task: the full priority-weighted reward when it finishes
/// within the deadline (inclusive), nothing otherwise.
pub fn task_revenue(total_s: f64, econ: &EconomicParams, priority: Priority) -> f64 {
    if total_s <= econ.max_delay_s {
        econ.reward_per_task * priority.weight()
    } else {
        0.0
    }
}

/// Resources rented by a decision: (bandwidth in Hz, VM count).
pub fn rented_resources(decision: &SliceDecision, catalog: &SliceCatalog) -> Result<(f64, u32)> {
    decision.validate(catalog)?;
    let b = catalog.bandwidth_tiers_hz[decision.bandwidth_index()?];
    let v = catalog.vm_tiers[decision.vm_index()?];
    Ok((b, v))
}

/// Cost of one region's decision for one long slot.
pub fn decision_cost(decision: &SliceDecision, catalog: &SliceCatalog) -> Result<f64> {
    decision.validate(catalog)?;
    Ok(catalog.bandwidth_costs[decision.bandwidth_index()?] + catalog.vm_costs[decision.vm_index()?])
}

/// Renting cost of one long slot over all regions. Decisions and catalogs
/// are matched positionally and must agree on region ids.
pub fn renting_cost(decisions: &[SliceDecision], catalogs: &[SliceCatalog]) -> Result<f64> {
    if decisions.len() != catalogs.len() {
        return Err(Error::contract(format!(
            "{} decisions for {} regions",
            decisions.len(),
            catalogs.len()
        )));
    }
    decisions
        .iter()
        .zip(catalogs)
        .map(|(d, c)| decision_cost(d, c))
        .sum()
}

/// Σ_h (revenue_h − cost_h).
pub fn profit(revenues: &[f64], costs: &[f64]) -> f64 {
    revenues.iter().sum::<f64>() - costs.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn radio() -> RadioParams {
        RadioParams::from_db(100.0, -110.0, -60.0, 2.0).unwrap()
    }

    fn task(d: f64, eta: f64) -> TaskSpec {
        TaskSpec::new(d, eta, Priority::LOW, 1000.0).unwrap()
    }

    #[test]
    fn radio_is_stored_linear() {
        let r = radio();
        assert_relative_eq!(r.noise_power_mw, 1e-11, max_relative = 1e-12);
        assert_relative_eq!(r.gain_ref, 1e-6, max_relative = 1e-12);
        assert_relative_eq!(r.snr(1000.0), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn upload_rate_examples() {
        let r = radio();
        let expected = 1e6 * 11f64.log2();
        assert_relative_eq!(upload_rate(1e6, 1000.0, &r).unwrap(), expected, max_relative = 1e-12);
        assert_relative_eq!(upload_rate(1e6, 1000.0, &r).unwrap(), 3.4594e6, max_relative = 1e-4);
        assert_eq!(upload_rate(0.0, 1234.0, &r).unwrap(), 0.0);
        assert_relative_eq!(
            upload_rate(1e6, 1.0, &r).unwrap(),
            1e6 * (1.0 + 1e7f64).log2(),
            max_relative = 1e-12
        );
        assert_relative_eq!(upload_rate(1e6, 1.0, &r).unwrap(), 2.32535e7, max_relative = 1e-5);
    }

    #[test]
    fn upload_rate_rejects_bad_inputs() {
        let r = radio();
        assert!(upload_rate(-1.0, 10.0, &r).is_err());
        assert!(upload_rate(1.0, 0.5, &r).is_err());
        assert!(upload_rate(f64::NAN, 10.0, &r).is_err());
    }

    #[test]
    fn upload_and_exec_times() {
        let t = task(1.6e6, 500.0);
        assert_relative_eq!(upload_time(&t, 3.4594e6).unwrap(), 0.46251, max_relative = 1e-5);
        assert_relative_eq!(upload_time(&t, 1.6e6).unwrap(), 1.0);
        assert_eq!(upload_time(&t, 0.0).unwrap(), f64::INFINITY);
        assert_relative_eq!(exec_time(&t, 2e9).unwrap(), 0.4, max_relative = 1e-12);
        assert_relative_eq!(exec_time(&task(1.6e6, 100.0), 2e9).unwrap(), 0.08, max_relative = 1e-12);
        assert_eq!(exec_time(&task(1.6e6, 0.0), 2e9).unwrap(), 0.0);
        assert!(exec_time(&t, 0.0).is_err());
    }

    #[test]
    fn zero_payload_uploads_instantly() {
        // data_bits == 0 cannot be built through the validating constructor
        let t = TaskSpec {
            data_bits: 0.0,
            density_cycles_per_bit: 1.0,
            priority: Priority::LOW,
            distance_m: 5.0,
        };
        assert_eq!(upload_time(&t, 10.0).unwrap(), 0.0);
        assert_eq!(upload_time(&t, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn queue_time_examples() {
        assert_eq!(queue_time(&VmQueue::new(), 2e9).unwrap(), 0.0);
        let q = VmQueue::from_cycles([8e8, 8e8]).unwrap();
        assert_relative_eq!(queue_time(&q, 2e9).unwrap(), 0.8, max_relative = 1e-12);
        let q = VmQueue::from_cycles([1.6e8]).unwrap();
        assert_relative_eq!(queue_time(&q, 2e9).unwrap(), 0.08, max_relative = 1e-12);
        assert!(VmQueue::from_cycles([-1.0]).is_err());
    }

    #[test]
    fn drain_consumes_fifo() {
        let mut q = VmQueue::from_cycles([2e9, 3e9]).unwrap();
        let busy = q.drain(2.0, 2e9);
        assert_relative_eq!(busy, 2.0);
        assert_eq!(q.entries().collect::<Vec<_>>(), vec![1e9]);
        let busy = q.drain(10.0, 2e9);
        assert_relative_eq!(busy, 0.5);
        assert!(q.is_empty());
    }

    #[test]
    fn total_time_examples() {
        assert_relative_eq!(total_time(0.4625, 0.0, 0.4), 0.8625, max_relative = 1e-12);
        assert_eq!(total_time(0.0, 0.0, 0.0), 0.0);
        assert_eq!(total_time(f64::INFINITY, 0.0, 0.4), f64::INFINITY);
    }

    #[test]
    fn revenue_examples() {
        let econ = EconomicParams::new(1.0, 1.0, 24, 6).unwrap();
        assert_eq!(task_revenue(0.9, &econ, Priority::HIGH), 3.0);
        assert_eq!(task_revenue(1.2, &econ, Priority::MEDIUM), 0.0);
        assert_eq!(task_revenue(1.0, &econ, Priority::LOW), 1.0);
        assert_eq!(task_revenue(f64::INFINITY, &econ, Priority::HIGH), 0.0);
    }

    fn standard_catalogs() -> Vec<SliceCatalog> {
        vec![
            SliceCatalog::linear("R1", 20, 3.0, 16, 2.0, 2e9).unwrap(),
            SliceCatalog::linear("R2", 25, 2.0, 12, 4.0, 2e9).unwrap(),
            SliceCatalog::linear("R3", 30, 1.0, 8, 6.0, 2e9).unwrap(),
        ]
    }

    #[test]
    fn rented_resources_examples() {
        let cats = standard_catalogs();
        let d = SliceDecision::from_indices(&cats[0], 9, 7).unwrap();
        assert_eq!(rented_resources(&d, &cats[0]).unwrap(), (10e6, 8));
        let d = SliceDecision::from_indices(&cats[2], 29, 7).unwrap();
        assert_eq!(rented_resources(&d, &cats[2]).unwrap(), (30e6, 8));
        let mut bad = SliceDecision::from_indices(&cats[0], 0, 0).unwrap();
        bad.bandwidth_choice[3] = 1;
        assert!(matches!(rented_resources(&bad, &cats[0]), Err(Error::Contract(_))));
        let mut empty = bad.clone();
        empty.bandwidth_choice = vec![0; 20];
        assert!(rented_resources(&empty, &cats[0]).is_err());
        let mut two = SliceDecision::from_indices(&cats[0], 0, 0).unwrap();
        two.vm_choice[0] = 2;
        assert!(rented_resources(&two, &cats[0]).is_err());
    }

    #[test]
    fn renting_cost_examples() {
        let cats = standard_catalogs();
        let r1 = SliceDecision::from_indices(&cats[0], 9, 7).unwrap();
        assert_eq!(decision_cost(&r1, &cats[0]).unwrap(), 46.0);
        let r3 = SliceDecision::from_indices(&cats[2], 29, 7).unwrap();
        assert_eq!(decision_cost(&r3, &cats[2]).unwrap(), 78.0);
        let cheapest: Vec<_> = cats
            .iter()
            .map(|c| SliceDecision::from_indices(c, 0, 0).unwrap())
            .collect();
        assert_eq!(renting_cost(&cheapest, &cats).unwrap(), 18.0);
        assert!(renting_cost(&cheapest[..2], &cats).is_err());
        let swapped = vec![cheapest[1].clone(), cheapest[0].clone(), cheapest[2].clone()];
        assert!(matches!(
            renting_cost(&swapped, &cats),
            Err(Error::RegionMismatch { .. })
        ));
    }

    #[test]
    fn profit_examples() {
        assert_eq!(profit(&[100.0, 120.0], &[40.0, 40.0]), 140.0);
        assert_eq!(profit(&[46.0], &[46.0]), 0.0);
        assert!(profit(&[46.0], &[46.0 + 1e-9]) < 0.0);
    }

    #[test]
    fn catalog_validation() {
        assert!(SliceCatalog::new("x", vec![1.0, 1.0], vec![1.0, 2.0], vec![1], vec![1.0], 1.0).is_err());
        assert!(SliceCatalog::new("x", vec![1.0, 2.0], vec![1.0], vec![1], vec![1.0], 1.0).is_err());
        assert!(SliceCatalog::new("x", vec![1.0], vec![0.0], vec![1], vec![1.0], 1.0).is_err());
        assert!(SliceCatalog::new("x", vec![1.0], vec![1.0], vec![1], vec![1.0], 0.0).is_err());
        assert!(SliceCatalog::new("x", vec![1.0], vec![1.0], vec![1], vec![1.0], 1.0).is_ok());
    }

    #[test]
    fn priority_and_task_validation() {
        assert!(Priority::new(0).is_err());
        assert!(Priority::new(4).is_err());
        assert!(TaskSpec::new(0.0, 1.0, Priority::LOW, 1.0).is_err());
        assert!(TaskSpec::new(1.0, -1.0, Priority::LOW, 1.0).is_err());
        assert!(TaskSpec::new(1.0, 1.0, Priority::LOW, 0.9).is_err());
        assert!(RadioParams::new(1.0, 1.0, 1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn rate_monotone(b1 in 0.0f64..5e7, db in 0.0f64..5e7, l1 in 1.0f64..3000.0, dl in 0.0f64..3000.0) {
            let r = radio();
            let base = upload_rate(b1, l1, &r).unwrap();
            prop_assert!(upload_rate(b1 + db, l1, &r).unwrap() >= base);
            prop_assert!(upload_rate(b1, l1 + dl, &r).unwrap() <= base);
        }

        #[test]
        fn queue_time_is_additive(a in proptest::collection::vec(0.0f64..1e10, 0..8),
                                  b in proptest::collection::vec(0.0f64..1e10, 0..8)) {
            let f = 2e9;
            let qa = VmQueue::from_cycles(a.clone()).unwrap();
            let qb = VmQueue::from_cycles(b.clone()).unwrap();
            let qab = VmQueue::from_cycles(a.into_iter().chain(b)).unwrap();
            let lhs = queue_time(&qab, f).unwrap();
            let rhs = queue_time(&qa, f).unwrap() + queue_time(&qb, f).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }

        #[test]
        fn revenue_is_all_or_nothing(t in 0.0f64..3.0, tmax in 0.1f64..2.0, p in 1u8..=3) {
            let econ = EconomicParams::new(1.5, tmax, 1, 1).unwrap();
            let pr = Priority::new(p).unwrap();
            let v = task_revenue(t, &econ, pr);
            prop_assert!(v == 0.0 || v == 1.5 * f64::from(p));
            prop_assert_eq!(task_revenue(tmax, &econ, pr), 1.5 * f64::from(p));
        }

        #[test]
        fn db_round_trip(x in 1e-15f64..1e15) {
            let back = db_to_linear(linear_to_db(x));
            prop_assert!((back - x).abs() <= 1e-12 * x);
        }

        #[test]
        fn renting_cost_is_dot_product(idx in proptest::collection::vec((0usize..20, 0usize..8), 3)) {
            let cats = standard_catalogs();
            let decisions: Vec<_> = cats.iter().zip(&idx)
                .map(|(c, &(b, v))| SliceDecision::from_indices(c, b, v).unwrap())
                .collect();
            let brute: f64 = decisions.iter().zip(&cats).map(|(d, c)| {
                let bw: f64 = d.bandwidth_choice.iter().zip(&c.bandwidth_costs).map(|(&a, z)| f64::from(a) * z).sum();
                let vm: f64 = d.vm_choice.iter().zip(&c.vm_costs).map(|(&a, z)| f64::from(a) * z).sum();
                bw + vm
            }).sum();
            prop_assert_eq!(renting_cost(&decisions, &cats).unwrap(), brute);
        }
    }
}
